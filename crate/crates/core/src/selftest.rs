//! Quick invariant suite, one named check per component. Every check is
//! seeded, so a given build either always passes or always fails.

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::analytic::{binomial_upper_tail, chunk_reject_prob};
use crate::bitplane::{bf16_exponent_planes, pack_planes, unpack_planes};
use crate::fault::{stream_rng, BitFlipper, ChunkOutcomeSampler};
use crate::gf::{mul_bitwise, Field, FieldSpec, Symbol};
use crate::inner::{InnerCodec, InnerPolicy, VerdictKind, PAYLOAD_BYTES};
use crate::outer::{ErasureSet, OuterCodec, SpanLayout};
use crate::rs::{CodeSpec, DecodeStatus, RsCode};
use crate::sim::{simulate, SimConfig, WireConvention, WritePolicy};
use crate::workload::{read_trace, write_trace, AccessRecord, Op, WorkloadSpec};

#[derive(Debug, Clone)]
pub struct SelftestOptions {
    pub seed: u64,
    /// Randomized cases per check.
    pub trials: usize,
    /// Corrupt one GF(2^8) antilog entry before running, to show the suite
    /// catches it.
    pub corrupt_field: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seed: 0x5E1F,
            trials: 100,
            corrupt_field: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_names(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn check_field(f: &Field) -> Check {
    let spec = f.spec();
    let mut x: Symbol = 1;
    for i in 0..f.order() {
        ensure(f.exp(i) == x, || format!("GF(2^{}) antilog entry {i} is {:#x}, expected {x:#x}", spec.m, f.exp(i)))?;
        x = mul_bitwise(x, spec.generator, spec);
    }
    let step = (f.order() / 509).max(1);
    for a in (1..=f.order()).step_by(step) {
        let a = a as Symbol;
        let inv = f.inv(a).map_err(|e| e.to_string())?;
        ensure(f.mul(a, inv) == 1, || format!("GF(2^{}) {a:#x} * inverse != 1", spec.m))?;
        for b in (0..=f.order()).step_by(step * 7 + 1) {
            let b = b as Symbol;
            ensure(f.mul(a, b) == mul_bitwise(a, b, spec), || {
                format!("GF(2^{}) table product {a:#x}*{b:#x} disagrees with carry-less reduction", spec.m)
            })?;
        }
    }
    Ok(format!("GF(2^{}) tables consistent", spec.m))
}

fn check_gf(opts: &SelftestOptions) -> Check {
    let mut small = Field::new(FieldSpec::GF256).map_err(|e| e.to_string())?;
    if opts.corrupt_field {
        small.corrupt_exp_entry(37);
    }
    let a = check_field(&small)?;
    let b = check_field(&Field::gf65536())?;
    Ok(format!("{a}; {b}"))
}

fn check_rs(opts: &SelftestOptions) -> Check {
    let mut rng = stream_rng(opts.seed, &[2]);
    let code = RsCode::new(CodeSpec::new(Field::gf256(), 60, 44).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let (n, r) = (code.n(), code.r());
    for t in 0..opts.trials {
        let data: Vec<Symbol> = (0..code.k()).map(|_| rng.gen_range(0..256)).collect();
        let cw = code.encode(&data).map_err(|e| e.to_string())?;
        ensure(code.is_codeword(&cw).unwrap(), || format!("trial {t}: encoded word has nonzero syndromes"))?;
        let mut bad = cw.clone();
        for p in sample(&mut rng, n, r / 2) {
            bad[p] ^= rng.gen_range(1..256);
        }
        let out = code.decode_errors(&bad).map_err(|e| e.to_string())?;
        ensure(out.payload.as_deref() == Some(&data[..]), || format!("trial {t}: {} errors not corrected", r / 2))?;
        let mut erased = cw.clone();
        let pos: Vec<usize> = sample(&mut rng, n, r).into_vec();
        for &p in &pos {
            erased[p] = rng.gen_range(0..256);
        }
        let out = code.decode_erasures(&erased, &pos).map_err(|e| e.to_string())?;
        ensure(out.payload.as_deref() == Some(&data[..]), || format!("trial {t}: {r} erasures not recovered"))?;
        ensure(out.work.key_equation == 0 && out.work.locate == 0, || format!("trial {t}: erasure path ran locator work"))?;
        // Encoding is linear.
        let other: Vec<Symbol> = (0..code.k()).map(|_| rng.gen_range(0..256)).collect();
        let sum: Vec<Symbol> = data.iter().zip(&other).map(|(a, b)| a ^ b).collect();
        let lhs = code.encode(&sum).unwrap();
        let rhs: Vec<Symbol> = cw.iter().zip(code.encode(&other).unwrap()).map(|(a, b)| a ^ b).collect();
        ensure(lhs == rhs, || format!("trial {t}: encoder is not linear"))?;
        let mut over = cw.clone();
        for p in sample(&mut rng, n, r + 1) {
            over[p] ^= rng.gen_range(1..256);
        }
        let out = code.decode_erasures(&over, &sample(&mut rng, n, r + 1).into_vec()).unwrap();
        ensure(matches!(out.status, DecodeStatus::Failure(_)), || format!("trial {t}: decoded past the erasure budget"))?;
    }
    Ok(format!("RS({n},{}) x {} trials", code.k(), opts.trials))
}

fn check_inner(opts: &SelftestOptions) -> Check {
    let mut rng = stream_rng(opts.seed, &[3]);
    let codec = InnerCodec::global();
    for t in 0..opts.trials * 10 {
        let payload: [u8; PAYLOAD_BYTES] = rng.gen();
        let wire = codec.encode_array(&payload).to_wire();
        let k = t % 3;
        let mut bad = wire;
        for p in sample(&mut rng, wire.len(), k) {
            bad[p] ^= rng.gen_range(1..=255u8);
        }
        let v = codec.decode_codec(&bad, InnerPolicy::Correct);
        let expect = if k == 0 { VerdictKind::Clean } else { VerdictKind::Corrected(k as u8) };
        ensure(v.kind == expect && v.payload == Some(payload), || format!("trial {t}: {k} byte errors gave {:?}", v.kind))?;
        if k > 0 {
            let d = codec.decode_codec(&bad, InnerPolicy::DetectOnly);
            ensure(d.kind == VerdictKind::Erasure, || format!("trial {t}: detect-only accepted a damaged chunk"))?;
        }
    }
    Ok("RS(36,32) corrects up to 2 bytes".into())
}

fn check_outer(opts: &SelftestOptions) -> Check {
    let mut rng = stream_rng(opts.seed, &[4]);
    let layout = SpanLayout::reliability();
    let codec = OuterCodec::shared(layout).map_err(|e| e.to_string())?;
    let total = layout.total_chunks();
    for t in 0..opts.trials.div_ceil(10) {
        let mut data = vec![0u8; layout.w];
        rng.fill(&mut data[..]);
        let span = codec.encode_bytes(&data).map_err(|e| e.to_string())?;
        let erasures: ErasureSet = sample(&mut rng, total, layout.c).into_iter().collect();
        let mut damaged = span.clone();
        for i in erasures.iter() {
            damaged.set_slot(i, &rng.gen());
        }
        let rep = codec.repair(&damaged, &erasures).map_err(|e| format!("trial {t}: {e}"))?;
        ensure(rep.span == span, || format!("trial {t}: repair of {} chunks differs", layout.c))?;
        ensure(rep.work.locate == 0, || format!("trial {t}: erasure repair ran a root search"))?;
        let q = rng.gen_range(1..=4);
        let positions: Vec<usize> = sample(&mut rng, layout.n, q).into_vec();
        let new: Vec<[u8; PAYLOAD_BYTES]> = (0..q).map(|_| rng.gen()).collect();
        let old: Vec<[u8; PAYLOAD_BYTES]> = positions.iter().map(|&i| span.chunks[i]).collect();
        let parity = codec.diff_parity_update(&old, &new, &positions, &span.parity).map_err(|e| e.to_string())?;
        let mut edited = span.chunks.clone();
        for (&i, c) in positions.iter().zip(&new) {
            edited[i] = *c;
        }
        ensure(parity == codec.encode(&edited).unwrap(), || format!("trial {t}: differential parity differs from re-encode"))?;
        let too_many: ErasureSet = (0..=layout.c).collect();
        ensure(codec.repair(&damaged, &too_many).is_err(), || format!("trial {t}: repaired past capacity"))?;
    }
    Ok(format!("{} B span repairs {} chunks", layout.w, layout.c))
}

fn check_fault(opts: &SelftestOptions) -> Check {
    let mut buf = vec![0u8; 4096];
    BitFlipper::new(0.0).flip(&mut buf, &mut stream_rng(opts.seed, &[5]));
    ensure(buf.iter().all(|&b| b == 0), || "BER 0 flipped bits".into())?;
    let ber = 1e-3;
    let bits = 8 * buf.len() as u64 * 50;
    let mut flips = 0;
    let mut rng = stream_rng(opts.seed, &[5, 1]);
    let f = BitFlipper::new(ber);
    for _ in 0..50 {
        flips += f.flip(&mut buf, &mut rng);
    }
    let mean = ber * bits as f64;
    ensure((flips as f64 - mean).abs() < 5.0 * mean.sqrt(), || format!("{flips} flips, expected about {mean}"))?;
    let s = ChunkOutcomeSampler::new(ber);
    let (_, p_rej) = chunk_reject_prob(ber).unwrap();
    ensure((s.tail(3) - p_rej).abs() <= 1e-12 * p_rej.max(1e-300) + 1e-18, || "sampler tail disagrees with binomial".into())?;
    Ok(format!("{flips} flips over {bits} bits"))
}

fn check_analytic(_: &SelftestOptions) -> Check {
    let (q, p) = chunk_reject_prob(1e-4).map_err(|e| e.to_string())?;
    ensure((q - 7.997e-4).abs() < 1e-6, || format!("q = {q}"))?;
    ensure((p / 3.6e-6 - 1.0).abs() < 0.03, || format!("p_rej = {p}"))?;
    let whole = binomial_upper_tail(36, 0.3, 0);
    ensure((whole - 1.0).abs() < 1e-12, || format!("binomial tail from 0 sums to {whole}"))?;
    Ok(format!("p_rej(1e-4) = {p:.3e}"))
}

fn check_sim(_: &SelftestOptions) -> Check {
    let layout = SpanLayout::reliability();
    for (q, amp) in [(1u64, 6.25), (2, 4.25), (4, 3.25)] {
        let cfg = SimConfig {
            layout,
            wire: WireConvention::Payload,
            ..Default::default()
        };
        let trace = vec![AccessRecord { op: Op::Write, address: 0, length: 32 * q }];
        let m = simulate(trace, &cfg).map_err(|e| e.to_string())?;
        let got = m.bus_bytes as f64 / m.useful_bytes as f64;
        ensure(got == amp, || format!("q = {q}: amplification {got}, expected {amp}"))?;
    }
    let naive = SimConfig {
        layout,
        write_policy: WritePolicy::Naive,
        ..Default::default()
    };
    let m = simulate(vec![AccessRecord { op: Op::Write, address: 0, length: 32 }], &naive).map_err(|e| e.to_string())?;
    ensure(m.bus_bytes == 68 * 32, || format!("naive write moved {} bytes", m.bus_bytes))?;
    let cfg = SimConfig::default();
    let reads: Vec<AccessRecord> = (0..64).map(|i| AccessRecord { op: Op::Read, address: i * 2048, length: 2048 }).collect();
    let eta = simulate(reads, &cfg).map_err(|e| e.to_string())?.eta_eff(&cfg);
    ensure((eta - 2048.0 / 2592.0).abs() < 1e-12, || format!("streaming ceiling {eta}"))?;
    Ok(format!("ceiling {eta:.4}, amplification identities exact"))
}

fn check_bitplane(opts: &SelftestOptions) -> Check {
    let mut rng = stream_rng(opts.seed, &[8]);
    for t in 0..opts.trials {
        let values: Vec<u64> = (0..256).map(|_| rng.gen_range(0..1 << 16)).collect();
        let b = pack_planes(&values, 16, bf16_exponent_planes()).map_err(|e| e.to_string())?;
        ensure(unpack_planes(&b) == values, || format!("trial {t}: planes do not round trip"))?;
    }
    Ok("16-plane round trip".into())
}

fn check_workload(opts: &SelftestOptions) -> Check {
    let spec = WorkloadSpec {
        total_bytes: 1 << 20,
        seed: opts.seed,
        ..Default::default()
    };
    let a = spec.generate().map_err(|e| e.to_string())?;
    ensure(a == spec.generate().unwrap(), || "generation is not deterministic".into())?;
    let mut buf = Vec::new();
    write_trace(&mut buf, &a).map_err(|e| e.to_string())?;
    let back = read_trace(&buf[..], Some(spec.address_space_bytes)).map_err(|e| e.to_string())?;
    ensure(back == a, || "trace file does not round trip".into())?;
    Ok(format!("{} records", a.len()))
}

pub const CHECK_NAMES: [&str; 9] = [
    "gf-arithmetic",
    "rs-core",
    "inner-codec",
    "outer-codec",
    "fault-model",
    "analytic-model",
    "controller-sim",
    "bitplane",
    "workload",
];

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let checks: [fn(&SelftestOptions) -> Check; 9] = [
        check_gf,
        check_rs,
        check_inner,
        check_outer,
        check_fault,
        check_analytic,
        check_sim,
        check_bitplane,
        check_workload,
    ];
    let checks = CHECK_NAMES
        .iter()
        .zip(checks)
        .map(|(&name, f)| {
            let (passed, detail) = match f(opts) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { name, passed, detail }
        })
        .collect();
    SelftestReport { checks }
}
