//! Trace-driven execution of the read/write flows with byte-accurate traffic
//! accounting.
//!
//! Every request is split into per-span pieces. A piece covering a whole span
//! takes the sequential flow; anything smaller takes the random flow. Each
//! piece draws its randomness from a stream keyed by `(seed, request index,
//! span)`, so results do not depend on batching or thread count.
//!
//! Two engines decide chunk verdicts:
//! * bit-exact: real stored spans, real bit flips, the real inner decoder
//!   and a real erasure-only outer repair;
//! * statistical: faulty-byte counts drawn from the binomial sampler, no data.
//!
//! Read noise is transient: a replay of a span sees fresh flips.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::qualify;
use crate::bitplane::BypassProtection;
use crate::fault::{
    derive_seed, inject_burst, sample_burst_faulty_bytes, BitFlipper, ChunkOutcomeSampler, FaultConfig,
    FaultError, FlipStream,
};
use crate::inner::{classify, InnerCodec, InnerPolicy, VerdictKind, PAYLOAD_BYTES, WIRE_BYTES};
use crate::outer::{ErasureSet, OuterCodec, OuterError, Span, SpanLayout};
use crate::workload::{AccessRecord, Op};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("request {index}: {msg}")]
    Malformed { index: u64, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Outer(#[from] OuterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    BitExact,
    #[default]
    Statistical,
}

/// How the bit-exact engine turns a received chunk into a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detection {
    /// Syndrome decoding only.
    #[default]
    Codec,
    /// Verdict from the injected faulty-byte count.
    Perfect,
}

/// How parity bytes are billed on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WireConvention {
    /// Parity travels as inner-coded 36 B chunks, like data, both directions.
    #[default]
    Chunked,
    /// Parity is billed as its raw `P` bytes, once per parity update on the
    /// write fast path (the `72q + P` accounting).
    Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WritePolicy {
    /// Differential parity: touch only the written chunks and the parity.
    #[default]
    Differential,
    /// Read-modify-write of the whole span for every small write.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    pub inner_ns: f64,
    /// Added when any chunk needed local correction.
    pub corrected_extra_ns: f64,
    /// Total service time of a request that invoked the outer repair.
    pub outer_repair_ns: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            inner_ns: 6.9,
            corrected_extra_ns: 0.0,
            outer_repair_ns: 21.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub layout: SpanLayout,
    pub fault: FaultConfig,
    pub inner_policy: InnerPolicy,
    pub sim_mode: SimMode,
    pub detection: Detection,
    /// Chunks checked (and billed) per small read: `max(q, window)`. Small
    /// writes check the same data window plus the parity chunks. `None`
    /// checks only the requested chunks.
    pub rr_window: Option<usize>,
    /// Extra cost per write, as a fraction of the write request's wire bytes.
    pub write_penalty: f64,
    pub wire: WireConvention,
    pub write_policy: WritePolicy,
    /// Re-reads of a span whose erasures exceed the capacity.
    pub max_replays: u32,
    pub latency: LatencyModel,
    /// Protected fraction of bit planes.
    pub gamma: f64,
    pub bypass: BypassProtection,
    pub bytes_per_token: u64,
    pub failure_target: f64,
    /// Requests per scheduling batch.
    pub batch_requests: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            layout: SpanLayout::bandwidth(),
            fault: FaultConfig::default(),
            inner_policy: InnerPolicy::Correct,
            sim_mode: SimMode::Statistical,
            detection: Detection::Codec,
            rr_window: None,
            write_penalty: 0.05,
            wire: WireConvention::Chunked,
            write_policy: WritePolicy::Differential,
            max_replays: 16,
            latency: LatencyModel::default(),
            gamma: 1.0,
            bypass: BypassProtection::None,
            bytes_per_token: 15 << 30,
            failure_target: 1e-9,
            batch_requests: 1 << 16,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.fault.validate()?;
        let bad = |m: String| Err(SimError::Config(m));
        if let Some(m) = self.rr_window {
            if m == 0 || m > self.layout.n {
                return bad(format!("rr_window {m} must be in 1..={}", self.layout.n));
            }
        }
        if !(self.write_penalty >= 0.0) {
            return bad(format!("write_penalty {} must be >= 0", self.write_penalty));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.failure_target) {
            return bad(format!("failure_target {} outside [0, 1]", self.failure_target));
        }
        if self.bytes_per_token == 0 || self.batch_requests == 0 {
            return bad("bytes_per_token and batch_requests must be positive".into());
        }
        for (name, v) in [
            ("inner_ns", self.latency.inner_ns),
            ("corrected_extra_ns", self.latency.corrected_extra_ns),
            ("outer_repair_ns", self.latency.outer_repair_ns),
        ] {
            if !(v >= 0.0) {
                return bad(format!("latency.{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Access classes, in the order used by per-class counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessClass {
    SequentialRead = 0,
    RandomRead = 1,
    RandomWrite = 2,
    SequentialWrite = 3,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub clean: u64,
    pub corrected: u64,
    pub erasure: u64,
}

impl VerdictCounts {
    pub fn total(&self) -> u64 {
        self.clean + self.corrected + self.erasure
    }

    fn add(&mut self, o: &VerdictCounts) {
        self.clean += o.clean;
        self.corrected += o.corrected;
        self.erasure += o.erasure;
    }
}

/// Raw run counters; every field is an integer so merging is exact and
/// order-independent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimMetrics {
    /// Span-level accesses (one per request per touched span).
    pub accesses: u64,
    pub accesses_by_class: [u64; 4],
    pub escalations_by_class: [u64; 4],
    pub useful_bytes: u64,
    pub bus_bytes: u64,
    /// Wire bytes of write accesses, the base of the write penalty.
    pub write_bus_bytes: u64,
    pub verdicts: VerdictCounts,
    pub escalations: u64,
    pub outer_repairs: u64,
    pub replays: u64,
    pub uncorrectable_events: u64,
    /// Bit-exact only: accepted chunks whose payload differs from the truth.
    pub silent_corruptions: u64,
    /// Bit-exact only: chunks where codec and perfect detection disagree.
    pub mode_disagreements: u64,
    pub max_repairs_per_access: u64,
    /// Service latency histogram in picoseconds.
    pub latency_ps: BTreeMap<u64, u64>,
}

impl SimMetrics {
    pub fn merge(&mut self, o: &SimMetrics) {
        self.accesses += o.accesses;
        for i in 0..4 {
            self.accesses_by_class[i] += o.accesses_by_class[i];
            self.escalations_by_class[i] += o.escalations_by_class[i];
        }
        self.useful_bytes += o.useful_bytes;
        self.bus_bytes += o.bus_bytes;
        self.write_bus_bytes += o.write_bus_bytes;
        self.verdicts.add(&o.verdicts);
        self.escalations += o.escalations;
        self.outer_repairs += o.outer_repairs;
        self.replays += o.replays;
        self.uncorrectable_events += o.uncorrectable_events;
        self.silent_corruptions += o.silent_corruptions;
        self.mode_disagreements += o.mode_disagreements;
        self.max_repairs_per_access = self.max_repairs_per_access.max(o.max_repairs_per_access);
        for (k, v) in &o.latency_ps {
            *self.latency_ps.entry(*k).or_default() += v;
        }
    }

    pub fn record_latency_ns(&mut self, ns: f64) {
        *self.latency_ps.entry((ns * 1000.0).round() as u64).or_default() += 1;
    }

    pub fn penalty_bytes(&self, cfg: &SimConfig) -> f64 {
        cfg.write_penalty * self.write_bus_bytes as f64
    }

    /// Bus bytes after the write penalty and the bit-plane blend: protected
    /// planes pay the flow's bytes, bypass planes their own wire factor.
    pub fn effective_bus_bytes(&self, cfg: &SimConfig) -> f64 {
        let flow = self.bus_bytes as f64 + self.penalty_bytes(cfg);
        cfg.gamma * flow + (1.0 - cfg.gamma) * self.useful_bytes as f64 * cfg.bypass.wire_factor()
    }

    pub fn eta_eff(&self, cfg: &SimConfig) -> f64 {
        let bus = self.effective_bus_bytes(cfg);
        if bus == 0.0 {
            return 0.0;
        }
        self.useful_bytes as f64 / bus
    }

    /// Nearest-rank percentile in ns.
    pub fn latency_percentile_ns(&self, p: f64) -> Option<f64> {
        percentile_ps(&self.latency_ps, p).map(|ps| ps as f64 / 1000.0)
    }

    pub fn escalation_rate(&self, class: AccessClass) -> f64 {
        let n = self.accesses_by_class[class as usize];
        if n == 0 {
            0.0
        } else {
            self.escalations_by_class[class as usize] as f64 / n as f64
        }
    }

    pub fn summary(&self, cfg: &SimConfig) -> SimSummary {
        let p_cw_fail = if self.accesses == 0 {
            0.0
        } else {
            self.uncorrectable_events as f64 / self.accesses as f64
        };
        let q = qualify(p_cw_fail, cfg.bytes_per_token, &cfg.layout, cfg.failure_target)
            .expect("rate and token size validated");
        let v = &self.verdicts;
        let frac = |x: u64| if v.total() == 0 { 0.0 } else { x as f64 / v.total() as f64 };
        let pct = |p| self.latency_percentile_ns(p).unwrap_or(0.0);
        SimSummary {
            eta_eff: self.eta_eff(cfg),
            useful_bytes: self.useful_bytes,
            bus_bytes: self.bus_bytes,
            penalty_bytes: self.penalty_bytes(cfg),
            protected_bytes: cfg.gamma * self.useful_bytes as f64,
            bypass_bytes: (1.0 - cfg.gamma) * self.useful_bytes as f64,
            accesses: self.accesses,
            escalations: self.escalations,
            escalation_rate: if self.accesses == 0 {
                0.0
            } else {
                self.escalations as f64 / self.accesses as f64
            },
            outer_repairs: self.outer_repairs,
            replays: self.replays,
            uncorrectable_events: self.uncorrectable_events,
            p_cw_fail,
            p_token_fail: q.p_token_fail,
            qualified: q.qualified,
            chunks_checked: v.total(),
            frac_clean: frac(v.clean),
            frac_corrected: frac(v.corrected),
            frac_erasure: frac(v.erasure),
            silent_corruptions: self.silent_corruptions,
            mode_disagreements: self.mode_disagreements,
            latency_p50_ns: pct(0.5),
            latency_p90_ns: pct(0.9),
            latency_p99_ns: pct(0.99),
            latency_p999_ns: pct(0.999),
        }
    }
}

/// Flat, serializable view of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub eta_eff: f64,
    pub useful_bytes: u64,
    pub bus_bytes: u64,
    pub penalty_bytes: f64,
    pub protected_bytes: f64,
    pub bypass_bytes: f64,
    pub accesses: u64,
    pub escalations: u64,
    pub escalation_rate: f64,
    pub outer_repairs: u64,
    pub replays: u64,
    pub uncorrectable_events: u64,
    pub p_cw_fail: f64,
    pub p_token_fail: f64,
    pub qualified: bool,
    pub chunks_checked: u64,
    pub frac_clean: f64,
    pub frac_corrected: f64,
    pub frac_erasure: f64,
    pub silent_corruptions: u64,
    pub mode_disagreements: u64,
    pub latency_p50_ns: f64,
    pub latency_p90_ns: f64,
    pub latency_p99_ns: f64,
    pub latency_p999_ns: f64,
}

pub fn percentile_ps(hist: &BTreeMap<u64, u64>, p: f64) -> Option<u64> {
    let n: u64 = hist.values().sum();
    if n == 0 {
        return None;
    }
    let rank = ((p * n as f64).ceil() as u64).clamp(1, n);
    let mut seen = 0;
    for (&v, &c) in hist {
        seen += c;
        if seen >= rank {
            return Some(v);
        }
    }
    hist.keys().next_back().copied()
}

/// Per-request latency sampling with a fixed outer-invocation probability.
pub fn latency_tail(p_outer: f64, requests: u64, latency: &LatencyModel, seed: u64) -> BTreeMap<u64, u64> {
    let mut m = SimMetrics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x1A7]));
    let outer = rand_distr::Bernoulli::new(p_outer.clamp(0.0, 1.0)).unwrap();
    for _ in 0..requests {
        let ns = if rng.sample(outer) {
            latency.outer_repair_ns
        } else {
            latency.inner_ns
        };
        m.record_latency_ns(ns);
    }
    m.latency_ps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Unread,
    Accepted,
    Erased,
}

/// One span access split off a request.
#[derive(Debug, Clone, Copy)]
struct Piece {
    index: u64,
    span: u64,
    op: Op,
    start: usize,
    count: usize,
}

/// Per-attempt chunk state shared by both engines.
struct Attempt {
    slots: Vec<Slot>,
    erased: usize,
    corrected: usize,
}

impl Attempt {
    fn new(total: usize) -> Self {
        Attempt {
            slots: vec![Slot::Unread; total],
            erased: 0,
            corrected: 0,
        }
    }

    fn reset(&mut self) {
        self.slots.fill(Slot::Unread);
        self.erased = 0;
        self.corrected = 0;
    }

    fn record(&mut self, i: usize, kind: VerdictKind, m: &mut SimMetrics) {
        match kind {
            VerdictKind::Clean => {
                m.verdicts.clean += 1;
                self.slots[i] = Slot::Accepted;
            }
            VerdictKind::Corrected(_) => {
                m.verdicts.corrected += 1;
                self.corrected += 1;
                self.slots[i] = Slot::Accepted;
            }
            VerdictKind::Erasure => {
                m.verdicts.erasure += 1;
                self.erased += 1;
                self.slots[i] = Slot::Erased;
            }
        }
    }

    fn missing(&self) -> usize {
        self.slots.iter().filter(|&&s| s != Slot::Accepted).count()
    }
}

trait Engine {
    fn attempt(&mut self) -> &mut Attempt;
    /// Read and judge slots `start..start + count` with fresh noise.
    fn read(&mut self, start: usize, count: usize, rng: &mut ChaCha8Rng, m: &mut SimMetrics);
    /// One erasure-only pass over every slot not accepted.
    fn repair(&mut self, m: &mut SimMetrics) -> bool;
    /// Apply a small write after a successful read (and repair if any).
    fn write_chunks(&mut self, start: usize, count: usize, rng: &mut ChaCha8Rng);
    fn write_span(&mut self, rng: &mut ChaCha8Rng);
}

struct StatEngine<'a> {
    cfg: &'a SimConfig,
    sampler: &'a ChunkOutcomeSampler,
    att: Attempt,
}

impl StatEngine<'_> {
    fn faulty_with_burst(&self, base: usize, rng: &mut ChaCha8Rng) -> usize {
        match self.cfg.fault.burst {
            Some(b) if b.rate > 0.0 && rng.gen_bool(b.rate) => {
                (base + sample_burst_faulty_bytes(b.length_bits, rng)).min(WIRE_BYTES)
            }
            _ => base,
        }
    }
}

impl Engine for StatEngine<'_> {
    fn attempt(&mut self) -> &mut Attempt {
        &mut self.att
    }

    fn read(&mut self, start: usize, count: usize, rng: &mut ChaCha8Rng, m: &mut SimMetrics) {
        let policy = self.cfg.inner_policy;
        if self.cfg.fault.burst.is_none() {
            // Clean chunks are the default; only visit the faulty ones.
            let mut faulty: Vec<(usize, usize)> = Vec::new();
            self.sampler.sample_span(rng, count, |i, k| faulty.push((i, k)));
            for i in start..start + count {
                self.att.record(i, VerdictKind::Clean, m);
            }
            for (i, k) in faulty {
                // Undo the provisional clean.
                m.verdicts.clean -= 1;
                let kind = classify(k, policy);
                self.att.record(start + i, kind, m);
            }
            return;
        }
        for i in start..start + count {
            let base = self.sampler.sample_faulty_bytes(rng);
            let k = self.faulty_with_burst(base, rng);
            self.att.record(i, classify(k, policy), m);
        }
    }

    fn repair(&mut self, m: &mut SimMetrics) -> bool {
        let ok = self.att.missing() <= self.cfg.layout.c;
        if ok {
            m.outer_repairs += 1;
        }
        ok
    }

    fn write_chunks(&mut self, _: usize, _: usize, _: &mut ChaCha8Rng) {}
    fn write_span(&mut self, _: &mut ChaCha8Rng) {}
}

/// Stored wire contents of one span: `N` data chunks then the parity chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredSpan {
    pub wire: Vec<[u8; WIRE_BYTES]>,
}

impl StoredSpan {
    pub fn from_span(span: &Span, layout: &SpanLayout) -> Self {
        let codec = InnerCodec::global();
        let wire = (0..layout.total_chunks())
            .map(|i| codec.encode_array(&span.slot(i)).to_wire())
            .collect();
        StoredSpan { wire }
    }

    fn payload(&self, i: usize) -> [u8; PAYLOAD_BYTES] {
        self.wire[i][..PAYLOAD_BYTES].try_into().unwrap()
    }
}

/// Span contents, materialized on first write. Unwritten spans all share
/// one random background span.
#[derive(Debug)]
pub struct SpanStore {
    layout: SpanLayout,
    background: Arc<StoredSpan>,
    written: HashMap<u64, StoredSpan>,
}

impl SpanStore {
    pub fn new(layout: SpanLayout, seed: u64) -> Result<Self, SimError> {
        let codec = OuterCodec::shared(layout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xBAC6]));
        let mut data = vec![0u8; layout.w];
        rng.fill(&mut data[..]);
        let span = codec.encode_bytes(&data)?;
        Ok(SpanStore {
            layout,
            background: Arc::new(StoredSpan::from_span(&span, &layout)),
            written: HashMap::new(),
        })
    }

    pub fn get(&self, span: u64) -> &StoredSpan {
        self.written.get(&span).unwrap_or(&self.background)
    }

    pub fn written_spans(&self) -> usize {
        self.written.len()
    }

    fn take(&mut self, span: u64) -> Option<StoredSpan> {
        self.written.remove(&span)
    }

    fn put(&mut self, span: u64, s: StoredSpan) {
        self.written.insert(span, s);
    }

    pub fn layout(&self) -> &SpanLayout {
        &self.layout
    }
}

struct ExactEngine<'a> {
    cfg: &'a SimConfig,
    flipper: &'a BitFlipper,
    outer: &'a OuterCodec,
    background: &'a StoredSpan,
    own: Option<StoredSpan>,
    att: Attempt,
    received: Vec<[u8; PAYLOAD_BYTES]>,
}

impl ExactEngine<'_> {
    fn stored(&self) -> &StoredSpan {
        self.own.as_ref().unwrap_or(self.background)
    }

    fn owned(&mut self) -> &mut StoredSpan {
        if self.own.is_none() {
            self.own = Some(self.background.clone());
        }
        self.own.as_mut().unwrap()
    }

    fn to_span(&self) -> Span {
        let l = &self.cfg.layout;
        let mut span = Span {
            chunks: self.received[..l.n].to_vec(),
            parity: vec![0; l.p],
        };
        for i in l.n..l.total_chunks() {
            span.set_slot(i, &self.received[i]);
        }
        span
    }

    fn commit(&mut self, span: &Span) {
        let s = StoredSpan::from_span(span, &self.cfg.layout);
        self.own = Some(s);
    }
}

impl Engine for ExactEngine<'_> {
    fn attempt(&mut self) -> &mut Attempt {
        &mut self.att
    }

    fn read(&mut self, start: usize, count: usize, rng: &mut ChaCha8Rng, m: &mut SimMetrics) {
        let codec = InnerCodec::global();
        let policy = self.cfg.inner_policy;
        let mut noise = FlipStream::new(self.flipper, rng);
        for i in start..start + count {
            let truth = self.stored().wire[i];
            let mut wire = truth;
            let mut faulty = noise.apply(&mut wire, rng);
            if let Some(b) = self.cfg.fault.burst {
                if !inject_burst(&mut wire, &b, rng).is_empty() {
                    faulty = wire.iter().zip(&truth).filter(|(a, b)| a != b).count();
                }
            }
            let by_count = classify(faulty, policy);
            let decoded = codec.decode_codec(&wire, policy);
            let same_class = |a: VerdictKind, b: VerdictKind| {
                matches!(
                    (a, b),
                    (VerdictKind::Clean, VerdictKind::Clean)
                        | (VerdictKind::Corrected(_), VerdictKind::Corrected(_))
                        | (VerdictKind::Erasure, VerdictKind::Erasure)
                )
            };
            if !same_class(decoded.kind, by_count) {
                m.mode_disagreements += 1;
            }
            let (kind, payload) = match self.cfg.detection {
                Detection::Codec => (decoded.kind, decoded.payload),
                Detection::Perfect => match by_count {
                    VerdictKind::Erasure => (by_count, None),
                    // Perfect detection knows the truth for what it accepts
                    // only when the codec was within capability.
                    _ => (by_count, decoded.payload.or(Some(wire[..PAYLOAD_BYTES].try_into().unwrap()))),
                },
            };
            self.att.record(i, kind, m);
            if let Some(p) = payload {
                if p != self.stored().payload(i) {
                    m.silent_corruptions += 1;
                }
                self.received[i] = p;
            }
        }
    }

    fn repair(&mut self, m: &mut SimMetrics) -> bool {
        let erasures: ErasureSet = self
            .att
            .slots
            .iter()
            .enumerate()
            .filter(|(_, &s)| s != Slot::Accepted)
            .map(|(i, _)| i)
            .collect();
        if erasures.len() > self.cfg.layout.c {
            return false;
        }
        match self.outer.repair(&self.to_span(), &erasures) {
            Ok(rep) => {
                debug_assert_eq!(rep.work.locate, 0);
                m.outer_repairs += 1;
                let l = self.cfg.layout;
                for i in 0..l.total_chunks() {
                    self.received[i] = rep.span.slot(i);
                    self.att.slots[i] = Slot::Accepted;
                }
                for i in erasures.iter() {
                    if self.received[i] != self.stored().payload(i) {
                        m.silent_corruptions += 1;
                    }
                }
                true
            }
            Err(_) => false,
        }
    }

    fn write_chunks(&mut self, start: usize, count: usize, rng: &mut ChaCha8Rng) {
        let l = self.cfg.layout;
        let old: Vec<[u8; PAYLOAD_BYTES]> = self.received[start..start + count].to_vec();
        let new: Vec<[u8; PAYLOAD_BYTES]> = (0..count).map(|_| rng.gen()).collect();
        let positions: Vec<usize> = (start..start + count).collect();
        let mut span = self.to_span();
        let parity = self
            .outer
            .diff_parity_update(&old, &new, &positions, &span.parity)
            .expect("positions come from the span");
        // Data before parity: chunks land first, then the parity chunks.
        let codec = InnerCodec::global();
        let stored = self.owned();
        for (&i, c) in positions.iter().zip(&new) {
            stored.wire[i] = codec.encode_array(c).to_wire();
        }
        span.parity = parity;
        for i in l.n..l.total_chunks() {
            stored.wire[i] = codec.encode_array(&span.slot(i)).to_wire();
        }
    }

    fn write_span(&mut self, rng: &mut ChaCha8Rng) {
        let mut data = vec![0u8; self.cfg.layout.w];
        rng.fill(&mut data[..]);
        let span = self.outer.encode_bytes(&data).expect("span-sized buffer");
        self.commit(&span);
    }
}

/// Byte costs of the flows for one configuration.
struct Costs {
    n: usize,
    pc: usize,
    c: usize,
    span_read: u64,
    span_write: u64,
    parity_read_fast: u64,
    parity_write_fast: u64,
    naive_write: u64,
}

impl Costs {
    fn new(cfg: &SimConfig) -> Self {
        let l = &cfg.layout;
        let (n, pc) = (l.n, l.parity_chunks());
        let chunk = WIRE_BYTES as u64;
        let (span, pr, pw) = match cfg.wire {
            WireConvention::Chunked => (
                (n + pc) as u64 * chunk,
                pc as u64 * chunk,
                pc as u64 * chunk,
            ),
            WireConvention::Payload => (n as u64 * chunk + l.p as u64, 0, l.p as u64),
        };
        Costs {
            n,
            pc,
            c: l.c,
            span_read: span,
            span_write: span,
            parity_read_fast: pr,
            parity_write_fast: pw,
            naive_write: (l.w + l.p) as u64,
        }
    }

    fn parity_chunk(&self, cfg: &SimConfig, k: usize) -> u64 {
        match cfg.wire {
            WireConvention::Chunked => WIRE_BYTES as u64,
            WireConvention::Payload => {
                let start = k * PAYLOAD_BYTES;
                (cfg.layout.p.min(start + PAYLOAD_BYTES) - start) as u64
            }
        }
    }
}

struct Outcome {
    escalated: bool,
    failed: bool,
    replays: u32,
    repairs: u64,
}

/// Retry a failed repair by re-reading the whole span, up to the replay
/// budget. Returns whether a repair eventually succeeded.
fn replay_span<E: Engine>(
    cfg: &SimConfig,
    costs: &Costs,
    eng: &mut E,
    rng: &mut ChaCha8Rng,
    m: &mut SimMetrics,
    bus: &mut u64,
    out: &mut Outcome,
) -> bool {
    for _ in 0..cfg.max_replays {
        out.replays += 1;
        *bus += costs.span_read;
        eng.attempt().reset();
        eng.read(0, costs.n + costs.pc, rng, m);
        if eng.attempt().erased == 0 {
            return true;
        }
        if eng.attempt().erased <= costs.c {
            out.repairs += 1;
            if eng.repair(m) {
                return true;
            }
        }
    }
    false
}

fn run_piece<E: Engine>(cfg: &SimConfig, costs: &Costs, eng: &mut E, piece: &Piece, m: &mut SimMetrics) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.fault.seed, &[piece.index, piece.span]));
    let full = piece.start == 0 && piece.count == costs.n;
    let class = match (piece.op, full) {
        (Op::Read, true) => AccessClass::SequentialRead,
        (Op::Read, false) => AccessClass::RandomRead,
        (Op::Write, false) => AccessClass::RandomWrite,
        (Op::Write, true) => AccessClass::SequentialWrite,
    };
    let mut bus = 0u64;
    let mut out = Outcome {
        escalated: false,
        failed: false,
        replays: 0,
        repairs: 0,
    };
    eng.attempt().reset();
    let total = costs.n + costs.pc;
    let window = match cfg.rr_window {
        Some(w) if !full => w.max(piece.count).min(costs.n),
        _ => piece.count,
    };
    // Keep the window inside the span, covering the requested chunks.
    let w_start = piece.start.min(costs.n - window);

    match class {
        AccessClass::SequentialRead => {
            bus += costs.span_read;
            eng.read(0, total, &mut rng, m);
            if eng.attempt().erased > 0 {
                out.escalated = true;
                let ok = if eng.attempt().erased <= costs.c {
                    out.repairs += 1;
                    eng.repair(m)
                } else {
                    false
                };
                if !ok && !replay_span(cfg, costs, eng, &mut rng, m, &mut bus, &mut out) {
                    out.failed = true;
                }
            }
        }
        AccessClass::RandomRead => {
            bus += (window * WIRE_BYTES) as u64;
            eng.read(w_start, window, &mut rng, m);
            if eng.attempt().erased > 0 {
                out.escalated = true;
                // Fetch the rest of the data, then just enough parity.
                eng.read(0, w_start, &mut rng, m);
                eng.read(w_start + window, costs.n - w_start - window, &mut rng, m);
                bus += ((costs.n - window) * WIRE_BYTES) as u64;
                let mut fetched = 0;
                loop {
                    let e = eng.attempt().erased;
                    let need = (costs.pc + e).saturating_sub(costs.c).min(costs.pc);
                    if fetched >= need {
                        break;
                    }
                    eng.read(costs.n + fetched, 1, &mut rng, m);
                    bus += costs.parity_chunk(cfg, fetched);
                    fetched += 1;
                }
                let ok = if eng.attempt().missing() <= costs.c {
                    out.repairs += 1;
                    eng.repair(m)
                } else {
                    false
                };
                if !ok && !replay_span(cfg, costs, eng, &mut rng, m, &mut bus, &mut out) {
                    out.failed = true;
                }
            }
        }
        AccessClass::RandomWrite if cfg.write_policy == WritePolicy::Naive => {
            bus += costs.naive_write;
            eng.read(0, total, &mut rng, m);
            if eng.attempt().erased > 0 {
                out.escalated = true;
                let ok = if eng.attempt().erased <= costs.c {
                    out.repairs += 1;
                    eng.repair(m)
                } else {
                    false
                };
                if !ok && !replay_span(cfg, costs, eng, &mut rng, m, &mut bus, &mut out) {
                    out.failed = true;
                }
            }
            if !out.failed {
                eng.write_chunks(piece.start, piece.count, &mut rng);
            }
        }
        AccessClass::RandomWrite => {
            bus += (window * WIRE_BYTES) as u64 + costs.parity_read_fast;
            eng.read(w_start, window, &mut rng, m);
            eng.read(costs.n, costs.pc, &mut rng, m);
            if eng.attempt().erased > 0 {
                out.escalated = true;
                eng.read(0, w_start, &mut rng, m);
                eng.read(w_start + window, costs.n - w_start - window, &mut rng, m);
                bus += ((costs.n - window) * WIRE_BYTES) as u64;
                let ok = if eng.attempt().erased <= costs.c {
                    out.repairs += 1;
                    eng.repair(m)
                } else {
                    false
                };
                if !ok && !replay_span(cfg, costs, eng, &mut rng, m, &mut bus, &mut out) {
                    out.failed = true;
                }
            }
            if !out.failed {
                eng.write_chunks(piece.start, piece.count, &mut rng);
                bus += (piece.count * WIRE_BYTES) as u64 + costs.parity_write_fast;
            }
        }
        AccessClass::SequentialWrite => {
            eng.write_span(&mut rng);
            bus += costs.span_write;
        }
    }

    m.accesses += 1;
    m.accesses_by_class[class as usize] += 1;
    m.useful_bytes += (piece.count * PAYLOAD_BYTES) as u64;
    m.bus_bytes += bus;
    if piece.op == Op::Write {
        m.write_bus_bytes += bus;
    }
    m.replays += out.replays as u64;
    m.max_repairs_per_access = m.max_repairs_per_access.max(out.repairs);
    if out.escalated {
        m.escalations += 1;
        m.escalations_by_class[class as usize] += 1;
    }
    if out.failed {
        m.uncorrectable_events += 1;
    }
    let lat = &cfg.latency;
    let ns = if out.escalated {
        lat.outer_repair_ns * (1 + out.replays) as f64
    } else if eng.attempt().corrected > 0 {
        lat.inner_ns + lat.corrected_extra_ns
    } else {
        lat.inner_ns
    };
    m.record_latency_ns(ns);
}

fn split(rec: &AccessRecord, index: u64, layout: &SpanLayout) -> Result<Vec<Piece>, SimError> {
    let unit = PAYLOAD_BYTES as u64;
    if rec.length == 0 || !rec.length.is_multiple_of(unit) || !rec.address.is_multiple_of(unit) {
        return Err(SimError::Malformed {
            index,
            msg: format!("access {}+{} is not 32-byte aligned", rec.address, rec.length),
        });
    }
    let end = rec.address.checked_add(rec.length).ok_or_else(|| SimError::Malformed {
        index,
        msg: "address overflow".into(),
    })?;
    let w = layout.w as u64;
    let mut out = Vec::new();
    let mut a = rec.address;
    while a < end {
        let span = a / w;
        let stop = end.min((span + 1) * w);
        out.push(Piece {
            index,
            span,
            op: rec.op,
            start: ((a - span * w) / unit) as usize,
            count: ((stop - a) / unit) as usize,
        });
        a = stop;
    }
    Ok(out)
}

/// Stateful simulator; feed it batches, read metrics at the end.
pub struct Simulator {
    cfg: SimConfig,
    costs: Costs,
    sampler: ChunkOutcomeSampler,
    flipper: BitFlipper,
    outer: Arc<OuterCodec>,
    store: Option<SpanStore>,
    metrics: SimMetrics,
    next_index: u64,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let store = match cfg.sim_mode {
            SimMode::BitExact => Some(SpanStore::new(cfg.layout, cfg.fault.seed)?),
            SimMode::Statistical => None,
        };
        Ok(Simulator {
            costs: Costs::new(&cfg),
            sampler: ChunkOutcomeSampler::new(cfg.fault.ber),
            flipper: BitFlipper::new(cfg.fault.ber),
            outer: OuterCodec::shared(cfg.layout)?,
            store,
            metrics: SimMetrics::default(),
            next_index: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn metrics(&self) -> &SimMetrics {
        &self.metrics
    }

    pub fn store(&self) -> Option<&SpanStore> {
        self.store.as_ref()
    }

    pub fn into_metrics(self) -> SimMetrics {
        self.metrics
    }

    /// Run one batch of records, numbered after everything fed so far.
    pub fn run_batch(&mut self, records: &[AccessRecord]) -> Result<(), SimError> {
        let mut pieces = Vec::with_capacity(records.len());
        for (k, rec) in records.iter().enumerate() {
            pieces.extend(split(rec, self.next_index + k as u64, &self.cfg.layout)?);
        }
        self.next_index += records.len() as u64;
        let cfg = &self.cfg;
        let costs = &self.costs;
        let total = cfg.layout.total_chunks();
        let batch = match &mut self.store {
            None => {
                let sampler = &self.sampler;
                pieces
                    .par_chunks(1024)
                    .map(|group| {
                        let mut m = SimMetrics::default();
                        let mut eng = StatEngine {
                            cfg,
                            sampler,
                            att: Attempt::new(total),
                        };
                        for p in group {
                            run_piece(cfg, costs, &mut eng, p, &mut m);
                        }
                        m
                    })
                    .reduce(SimMetrics::default, |mut a, b| {
                        a.merge(&b);
                        a
                    })
            }
            Some(store) => {
                // Requests to one span run in trace order; spans run in parallel.
                let mut by_span: BTreeMap<u64, Vec<Piece>> = BTreeMap::new();
                for p in pieces {
                    by_span.entry(p.span).or_default().push(p);
                }
                let mut groups: Vec<(u64, Option<StoredSpan>, Vec<Piece>)> = by_span
                    .into_iter()
                    .map(|(s, ps)| (s, store.take(s), ps))
                    .collect();
                let background = store.background.clone();
                let (flipper, outer) = (&self.flipper, &*self.outer);
                let m = groups
                    .par_iter_mut()
                    .map(|(_, own, ps)| {
                        let mut m = SimMetrics::default();
                        let mut eng = ExactEngine {
                            cfg,
                            flipper,
                            outer,
                            background: &background,
                            own: own.take(),
                            att: Attempt::new(total),
                            received: vec![[0; PAYLOAD_BYTES]; total],
                        };
                        for p in ps.iter() {
                            run_piece(cfg, costs, &mut eng, p, &mut m);
                        }
                        *own = eng.own;
                        m
                    })
                    .reduce(SimMetrics::default, |mut a, b| {
                        a.merge(&b);
                        a
                    });
                for (s, own, _) in groups {
                    if let Some(o) = own {
                        store.put(s, o);
                    }
                }
                m
            }
        };
        self.metrics.merge(&batch);
        Ok(())
    }
}

/// Replay a whole trace through the flows.
pub fn simulate<I>(trace: I, cfg: &SimConfig) -> Result<SimMetrics, SimError>
where
    I: IntoIterator<Item = AccessRecord>,
{
    let mut sim = Simulator::new(cfg.clone())?;
    let mut batch = Vec::with_capacity(cfg.batch_requests);
    for rec in trace {
        batch.push(rec);
        if batch.len() == cfg.batch_requests {
            sim.run_batch(&batch)?;
            batch.clear();
        }
    }
    if !batch.is_empty() {
        sim.run_batch(&batch)?;
    }
    Ok(sim.into_metrics())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{chunk_reject_prob, escalation_mix, AccessMix};
    use crate::workload::WorkloadSpec;

    fn reads(n: u64, len: u64, stride: u64) -> Vec<AccessRecord> {
        (0..n)
            .map(|i| AccessRecord {
                op: Op::Read,
                address: i * stride,
                length: len,
            })
            .collect()
    }

    fn writes(n: u64, len: u64) -> Vec<AccessRecord> {
        (0..n)
            .map(|i| AccessRecord {
                op: Op::Write,
                address: i * 4096 + 64,
                length: len,
            })
            .collect()
    }

    #[test]
    fn ceiling_at_zero_ber() {
        for mode in [SimMode::Statistical, SimMode::BitExact] {
            let cfg = SimConfig {
                sim_mode: mode,
                ..Default::default()
            };
            let m = simulate(reads(500, 2048, 2048), &cfg).unwrap();
            assert_eq!(m.bus_bytes, 500 * 2592);
            assert!((m.eta_eff(&cfg) - 2048.0 / 2592.0).abs() < 1e-12);
            assert_eq!(m.escalations, 0);
        }
    }

    #[test]
    fn amplification_by_convention() {
        let l = SpanLayout::reliability();
        for (q, amp) in [(1u64, 6.25), (2, 4.25), (4, 3.25)] {
            let cfg = SimConfig {
                layout: l,
                wire: WireConvention::Payload,
                ..Default::default()
            };
            let m = simulate(writes(100, 32 * q), &cfg).unwrap();
            assert_eq!(m.bus_bytes as f64 / m.useful_bytes as f64, amp);
        }
        let cfg = SimConfig {
            layout: l,
            write_policy: WritePolicy::Naive,
            ..Default::default()
        };
        let m = simulate(writes(100, 32), &cfg).unwrap();
        assert_eq!(m.bus_bytes, 100 * 2176);
        assert_eq!(m.bus_bytes as f64 / m.useful_bytes as f64, 68.0);
        // Chunked parity: 72q + 72 * parity chunks.
        let cfg = SimConfig { layout: l, ..Default::default() };
        let m = simulate(writes(10, 32), &cfg).unwrap();
        assert_eq!(m.bus_bytes, 10 * (72 + 72 * 4));
    }

    #[test]
    fn write_penalty_is_separate_from_wire_bytes() {
        let cfg = SimConfig::default();
        let m = simulate(writes(10, 2048).into_iter().map(|mut r| {
            r.address = 0;
            r
        }), &cfg)
        .unwrap();
        assert_eq!(m.bus_bytes, 10 * 2592);
        assert!((m.penalty_bytes(&cfg) - 0.05 * 25920.0).abs() < 1e-9);
    }

    #[test]
    fn bit_exact_writes_then_reads_round_trip() {
        // Writes materialize spans; later reads still decode clean at BER 0.
        let cfg = SimConfig {
            sim_mode: SimMode::BitExact,
            layout: SpanLayout::reliability(),
            ..Default::default()
        };
        let mut sim = Simulator::new(cfg.clone()).unwrap();
        sim.run_batch(&writes(20, 64)).unwrap();
        let seq: Vec<AccessRecord> = (0..20)
            .map(|i| AccessRecord { op: Op::Write, address: (100 + i) * 2048, length: 2048 })
            .collect();
        sim.run_batch(&seq).unwrap();
        assert_eq!(sim.store().unwrap().written_spans(), 40);
        let codec = OuterCodec::shared(cfg.layout).unwrap();
        for s in [0u64, 2, 100, 119] {
            let stored = sim.store().unwrap().get(s);
            let span = Span {
                chunks: (0..64).map(|i| stored.payload(i)).collect(),
                parity: (64..68).flat_map(|i| stored.payload(i)).collect(),
            };
            assert!(codec.syndromes(&span).unwrap().iter().all(|&x| x == 0));
        }
        sim.run_batch(&reads(20, 2048, 4096)).unwrap();
        let m = sim.metrics();
        assert_eq!(m.verdicts.erasure + m.verdicts.corrected, 0);
        assert_eq!(m.silent_corruptions, 0);
    }

    #[test]
    fn deterministic_and_batch_independent() {
        let spec = WorkloadSpec {
            total_bytes: 4 << 20,
            random_ratio: 0.3,
            read_ratio: 0.8,
            address_space_bytes: 1 << 20,
            ..Default::default()
        };
        let trace = spec.generate().unwrap();
        for mode in [SimMode::Statistical, SimMode::BitExact] {
            let mut cfg = SimConfig {
                sim_mode: mode,
                fault: FaultConfig { ber: 2e-3, ..Default::default() },
                ..Default::default()
            };
            let a = simulate(trace.clone(), &cfg).unwrap();
            cfg.batch_requests = 77;
            let b = simulate(trace.clone(), &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.escalations > 0);
            assert!(a.max_repairs_per_access <= 1 + cfg.max_replays as u64);
        }
    }

    #[test]
    fn escalation_rates_follow_the_analytic_mix() {
        // Reliability layout at a BER high enough for short runs.
        let ber = 1e-3;
        let l = SpanLayout::reliability();
        let cfg = SimConfig {
            layout: l,
            fault: FaultConfig { ber, ..Default::default() },
            rr_window: Some(32),
            ..Default::default()
        };
        let (_, p) = chunk_reject_prob(ber).unwrap();
        let mix = escalation_mix(p, &AccessMix::inference(&l), &l).unwrap();
        let n = 40_000u64;
        let seq = simulate(reads(n, 2048, 2048), &cfg).unwrap();
        let rr = simulate(reads(n, 32, 2048), &cfg).unwrap();
        let rw = simulate(writes(n, 32), &cfg).unwrap();
        let check = |got: f64, p: f64| {
            let s = (p * (1.0 - p) / n as f64).sqrt();
            assert!((got - p).abs() < 4.0 * s, "{got} vs {p}");
        };
        // Sequential reads check parity chunks too.
        check(seq.escalation_rate(AccessClass::SequentialRead), crate::analytic::any_of(p, 68));
        check(rr.escalation_rate(AccessClass::RandomRead), mix.random_read);
        check(rw.escalation_rate(AccessClass::RandomWrite), mix.random_write);
    }

    #[test]
    fn bit_exact_and_statistical_agree() {
        let ber = 1.5e-3;
        let base = SimConfig {
            layout: SpanLayout::reliability(),
            fault: FaultConfig { ber, ..Default::default() },
            detection: Detection::Perfect,
            ..Default::default()
        };
        let trace = reads(20_000, 2048, 2048);
        let s = simulate(trace.clone(), &SimConfig { sim_mode: SimMode::Statistical, ..base.clone() }).unwrap();
        let e = simulate(trace, &SimConfig { sim_mode: SimMode::BitExact, ..base.clone() }).unwrap();
        let n = s.accesses as f64;
        let (a, b) = (s.escalations as f64 / n, e.escalations as f64 / n);
        let sd = (a * (1.0 - a) / n).sqrt() * 2f64.sqrt();
        assert!((a - b).abs() < 4.0 * sd, "{a} vs {b}");
        assert_eq!(e.silent_corruptions, 0);
    }

    #[test]
    fn detect_only_needs_replays() {
        let cfg = SimConfig {
            fault: FaultConfig { ber: 1e-3, ..Default::default() },
            inner_policy: InnerPolicy::DetectOnly,
            ..Default::default()
        };
        let m = simulate(reads(2000, 2048, 2048), &cfg).unwrap();
        assert!(m.replays > 10 * m.accesses);
        assert!(m.eta_eff(&cfg) < 0.1);
        let off = SimConfig {
            inner_policy: InnerPolicy::Off,
            ..cfg.clone()
        };
        let m = simulate(reads(2000, 2048, 2048), &off).unwrap();
        assert_eq!(m.escalations, 0);
    }

    #[test]
    fn codec_mode_counts_silent_corruption_with_inner_off() {
        let cfg = SimConfig {
            sim_mode: SimMode::BitExact,
            fault: FaultConfig { ber: 1e-3, ..Default::default() },
            inner_policy: InnerPolicy::Off,
            ..Default::default()
        };
        let m = simulate(reads(200, 2048, 2048), &cfg).unwrap();
        assert!(m.silent_corruptions > 0);
    }

    #[test]
    fn latency_regimes() {
        let h = latency_tail(2.4e-3, 1_000_000, &LatencyModel::default(), 3);
        let m = SimMetrics {
            latency_ps: h,
            ..Default::default()
        };
        assert_eq!(m.latency_percentile_ns(0.5), Some(6.9));
        assert_eq!(m.latency_percentile_ns(0.999), Some(21.3));
        assert_eq!(percentile_ps(&BTreeMap::new(), 0.5), None);
    }

    #[test]
    fn malformed_and_config_errors() {
        let cfg = SimConfig::default();
        let bad = vec![AccessRecord { op: Op::Read, address: 3, length: 32 }];
        assert!(matches!(simulate(bad, &cfg), Err(SimError::Malformed { index: 0, .. })));
        let c = SimConfig { rr_window: Some(65), ..Default::default() };
        assert!(Simulator::new(c).is_err());
        let c = SimConfig { gamma: 1.5, ..Default::default() };
        assert!(Simulator::new(c).is_err());
    }

    #[test]
    fn crossing_request_splits_per_span() {
        let cfg = SimConfig::default();
        let rec = AccessRecord { op: Op::Read, address: 1024, length: 2048 };
        let m = simulate(vec![rec], &cfg).unwrap();
        assert_eq!(m.accesses, 2);
        assert_eq!(m.bus_bytes, 2 * 32 * 36);
    }
}
