//! Seedable fault injection and the statistical per-chunk outcome sampler.
//!
//! Every random decision draws from a ChaCha stream keyed by
//! `(master seed, ids...)`, so results never depend on thread scheduling.
//! Bit flips use geometric gap sampling: the cost is proportional to the
//! number of flips, not the number of bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inner::{CORRECTABLE_BYTES, WIRE_BYTES};

pub const CHUNK_BITS: usize = WIRE_BYTES * 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FaultError {
    #[error("ber {0} outside [0, 1]")]
    Ber(f64),
    #[error("burst rate {0} outside [0, 1]")]
    BurstRate(f64),
    #[error("burst length {0} bits must be in 1..=288")]
    BurstLength(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstConfig {
    /// Probability that a given chunk takes a burst.
    pub rate: f64,
    /// Contiguous bits overwritten, confined to one 36 B chunk.
    pub length_bits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultConfig {
    pub ber: f64,
    pub burst: Option<BurstConfig>,
    pub seed: u64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            ber: 0.0,
            burst: None,
            seed: 0x5EED,
        }
    }
}

impl FaultConfig {
    pub fn validate(&self) -> Result<(), FaultError> {
        if !(0.0..=1.0).contains(&self.ber) {
            return Err(FaultError::Ber(self.ber));
        }
        if let Some(b) = self.burst {
            if !(0.0..=1.0).contains(&b.rate) {
                return Err(FaultError::BurstRate(b.rate));
            }
            if b.length_bits == 0 || b.length_bits > CHUNK_BITS {
                return Err(FaultError::BurstLength(b.length_bits));
            }
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of stream ids.
pub fn derive_seed(master: u64, ids: &[u64]) -> u64 {
    ids.iter().fold(splitmix(master), |acc, &id| splitmix(acc ^ splitmix(id)))
}

pub fn stream_rng(master: u64, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, ids))
}

/// Per-byte error probability `1 - (1 - ber)^8`, accurate for tiny `ber`.
pub fn byte_error_prob(ber: f64) -> f64 {
    if ber >= 1.0 {
        return 1.0;
    }
    -(8.0 * (-ber).ln_1p()).exp_m1()
}

/// Reusable i.i.d. bit flipper.
#[derive(Debug, Clone)]
pub struct BitFlipper {
    gap: Option<Geometric>,
}

impl BitFlipper {
    pub fn new(ber: f64) -> Self {
        BitFlipper {
            gap: (ber > 0.0).then(|| Geometric::new(ber.min(1.0)).expect("ber in (0, 1]")),
        }
    }

    /// Flip each bit of `buf` with probability `ber`; returns flipped positions
    /// through `on_flip` and the total count.
    pub fn flip_with<R: Rng>(&self, buf: &mut [u8], rng: &mut R, mut on_flip: impl FnMut(usize)) -> u64 {
        let Some(gap) = &self.gap else { return 0 };
        let bits = buf.len() as u64 * 8;
        let mut flips = 0;
        let mut pos = gap.sample(rng);
        while pos < bits {
            let b = pos as usize;
            buf[b / 8] ^= 1 << (b % 8);
            on_flip(b);
            flips += 1;
            pos = pos.saturating_add(1).saturating_add(gap.sample(rng));
        }
        flips
    }

    pub fn flip<R: Rng>(&self, buf: &mut [u8], rng: &mut R) -> u64 {
        self.flip_with(buf, rng, |_| {})
    }
}

/// Bit-flip cursor over a sequence of buffers read back to back, so the
/// geometric gap carries across chunk boundaries.
#[derive(Debug)]
pub struct FlipStream<'a> {
    gap: Option<&'a Geometric>,
    until: u64,
}

impl<'a> FlipStream<'a> {
    pub fn new<R: Rng>(flipper: &'a BitFlipper, rng: &mut R) -> Self {
        let gap = flipper.gap.as_ref();
        let until = gap.map_or(u64::MAX, |g| g.sample(rng));
        FlipStream { gap, until }
    }

    /// Flip the next `8 * buf.len()` bits of the stream into `buf`; returns
    /// the number of distinct bytes touched.
    #[inline]
    pub fn apply<R: Rng>(&mut self, buf: &mut [u8], rng: &mut R) -> usize {
        let bits = buf.len() as u64 * 8;
        let Some(gap) = self.gap else { return 0 };
        let mut faulty = 0;
        let mut last = usize::MAX;
        while self.until < bits {
            let b = self.until as usize;
            buf[b / 8] ^= 1 << (b % 8);
            if b / 8 != last {
                faulty += 1;
                last = b / 8;
            }
            self.until = self.until.saturating_add(1).saturating_add(gap.sample(rng));
        }
        self.until -= bits;
        faulty
    }
}

/// Flip bits at `cfg.ber` using the stream `(cfg.seed, stream_id)`.
pub fn inject_bits(buf: &mut [u8], cfg: &FaultConfig, stream_id: u64) -> u64 {
    let mut rng = stream_rng(cfg.seed, &[stream_id]);
    BitFlipper::new(cfg.ber).flip(buf, &mut rng)
}

/// Overwrite one contiguous run of random bits inside each chunk that takes a
/// burst. `buf` is a sequence of 36 B chunks; returns the chunk indices hit.
pub fn inject_burst<R: Rng>(buf: &mut [u8], burst: &BurstConfig, rng: &mut R) -> Vec<usize> {
    let mut hit = Vec::new();
    if burst.rate <= 0.0 {
        return hit;
    }
    let len = burst.length_bits.min(CHUNK_BITS);
    for (i, chunk) in buf.chunks_mut(WIRE_BYTES).enumerate() {
        let chunk_bits = chunk.len() * 8;
        if chunk_bits < len || !rng.gen_bool(burst.rate) {
            continue;
        }
        let start = rng.gen_range(0..=chunk_bits - len);
        for b in start..start + len {
            let mask = 1u8 << (b % 8);
            if rng.gen::<bool>() {
                chunk[b / 8] |= mask;
            } else {
                chunk[b / 8] &= !mask;
            }
        }
        hit.push(i);
    }
    hit
}

/// Bytes changed by one burst at a uniform offset in a chunk, without
/// materializing the chunk. A byte overlapped by `b` burst bits changes with
/// probability `1 - 2^-b`.
pub fn sample_burst_faulty_bytes<R: Rng>(length_bits: usize, rng: &mut R) -> usize {
    let len = length_bits.min(CHUNK_BITS);
    let start = rng.gen_range(0..=CHUNK_BITS - len);
    let end = start + len;
    let mut faulty = 0;
    let mut b = start / 8 * 8;
    while b < end {
        let overlap = (b + 8).min(end) - b.max(start);
        let changed = rng.gen_range(0u32..1 << overlap) != 0;
        faulty += changed as usize;
        b += 8;
    }
    faulty
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    Clean,
    Correctable,
    Escalate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkOutcome {
    pub kind: OutcomeKind,
    pub faulty_bytes: usize,
}

impl ChunkOutcome {
    pub fn from_faulty_bytes(faulty_bytes: usize) -> Self {
        let kind = match faulty_bytes {
            0 => OutcomeKind::Clean,
            n if n <= CORRECTABLE_BYTES => OutcomeKind::Correctable,
            _ => OutcomeKind::Escalate,
        };
        ChunkOutcome { kind, faulty_bytes }
    }
}

/// Samples `X ~ Binomial(36, q)` faulty bytes per chunk by inverting a
/// precomputed survival table.
#[derive(Debug, Clone)]
pub struct ChunkOutcomeSampler {
    q: f64,
    // survival[k] = P(X >= k), k = 0..=37
    survival: [f64; WIRE_BYTES + 2],
    nonclean_gap: Option<Geometric>,
}

fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

impl ChunkOutcomeSampler {
    pub fn new(ber: f64) -> Self {
        let q = byte_error_prob(ber);
        let n = WIRE_BYTES as u64;
        let mut survival = [0.0; WIRE_BYTES + 2];
        if q >= 1.0 {
            survival[..=WIRE_BYTES].fill(1.0);
        } else if q > 0.0 {
            let (lq, lp) = (q.ln(), (-q).ln_1p());
            let pmf: Vec<f64> = (0..=n)
                .map(|k| (ln_choose(n, k) + k as f64 * lq + (n - k) as f64 * lp).exp())
                .collect();
            // Sum from the small tail upward.
            for k in (1..=WIRE_BYTES).rev() {
                survival[k] = survival[k + 1] + pmf[k];
            }
            survival[1] = -(n as f64 * lp).exp_m1();
            survival[0] = 1.0;
        } else {
            survival[0] = 1.0;
        }
        let nonclean_gap = (survival[1] > 0.0).then(|| Geometric::new(survival[1]).unwrap());
        ChunkOutcomeSampler {
            q,
            survival,
            nonclean_gap,
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `P(X >= k)`.
    pub fn tail(&self, k: usize) -> f64 {
        self.survival.get(k).copied().unwrap_or(0.0)
    }

    fn invert(&self, u: f64) -> usize {
        let mut k = 0;
        while k < WIRE_BYTES && self.survival[k + 1] > u {
            k += 1;
        }
        k
    }

    pub fn sample_faulty_bytes<R: Rng>(&self, rng: &mut R) -> usize {
        // 1 - gen() lies in (0, 1], so X = 36 needs u <= q^36 exactly.
        self.invert(1.0 - rng.gen::<f64>())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ChunkOutcome {
        ChunkOutcome::from_faulty_bytes(self.sample_faulty_bytes(rng))
    }

    /// Visit the non-clean chunks among `count` consecutive ones, skipping
    /// the clean runs geometrically.
    pub fn sample_span<R: Rng>(&self, rng: &mut R, count: usize, mut visit: impl FnMut(usize, usize)) {
        let Some(gap) = &self.nonclean_gap else { return };
        let p1 = self.survival[1];
        let mut i = gap.sample(rng);
        while i < count as u64 {
            let u = (1.0 - rng.gen::<f64>()) * p1;
            visit(i as usize, self.invert(u).max(1));
            i = i.saturating_add(1).saturating_add(gap.sample(rng));
        }
    }
}

/// One statistical chunk outcome at `ber`.
pub fn sample_chunk_outcome<R: Rng>(ber: f64, rng: &mut R) -> ChunkOutcome {
    ChunkOutcomeSampler::new(ber).sample(rng)
}

/// Count bytes of `a` and `b` that differ, per 36 B chunk.
pub fn faulty_bytes_per_chunk(a: &[u8], b: &[u8]) -> Vec<usize> {
    a.chunks(WIRE_BYTES)
        .zip(b.chunks(WIRE_BYTES))
        .map(|(x, y)| x.iter().zip(y).filter(|(p, q)| p != q).count())
        .collect()
}
