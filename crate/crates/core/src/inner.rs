//! Per-chunk RS(36,32) tier over GF(2^8).
//!
//! Payload byte `i` is symbol `i`; parity byte `j` is symbol `32 + j`. The
//! hot path never touches the generic decoder: syndromes and parity come
//! from per-position lookup tables packed into `u32`s, and single-byte
//! errors are located directly from the syndrome ratios.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf::{Field, Symbol};
use crate::rs::{CodeSpec, DecodeStatus, RsCode};

pub const PAYLOAD_BYTES: usize = 32;
pub const PARITY_BYTES: usize = 4;
pub const WIRE_BYTES: usize = PAYLOAD_BYTES + PARITY_BYTES;
/// Bytes the inner code can correct per chunk.
pub const CORRECTABLE_BYTES: usize = PARITY_BYTES / 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InnerError {
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Chunk {
    pub payload: [u8; PAYLOAD_BYTES],
    pub parity: [u8; PARITY_BYTES],
}

impl Chunk {
    pub fn to_wire(&self) -> [u8; WIRE_BYTES] {
        let mut w = [0u8; WIRE_BYTES];
        w[..PAYLOAD_BYTES].copy_from_slice(&self.payload);
        w[PAYLOAD_BYTES..].copy_from_slice(&self.parity);
        w
    }

    pub fn from_wire(wire: &[u8]) -> Result<Self, InnerError> {
        if wire.len() != WIRE_BYTES {
            return Err(InnerError::Length {
                expected: WIRE_BYTES,
                got: wire.len(),
            });
        }
        let mut c = Chunk {
            payload: [0; PAYLOAD_BYTES],
            parity: [0; PARITY_BYTES],
        };
        c.payload.copy_from_slice(&wire[..PAYLOAD_BYTES]);
        c.parity.copy_from_slice(&wire[PAYLOAD_BYTES..]);
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    Clean,
    Corrected(u8),
    Erasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkVerdict {
    pub kind: VerdictKind,
    pub payload: Option<[u8; PAYLOAD_BYTES]>,
}

impl ChunkVerdict {
    pub fn is_erasure(&self) -> bool {
        self.kind == VerdictKind::Erasure
    }

    fn erasure() -> Self {
        ChunkVerdict {
            kind: VerdictKind::Erasure,
            payload: None,
        }
    }
}

/// What the inner tier does with a nonzero syndrome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerPolicy {
    /// Correct up to two bytes, flag the rest.
    #[default]
    Correct,
    /// Flag every chunk with a nonzero syndrome.
    DetectOnly,
    /// No checking: every chunk is accepted as received.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Decide from the syndromes alone, like hardware would.
    Codec,
    /// Decide from the injected faulty-byte count supplied by the fault model.
    PerfectDetection { faulty_bytes: usize },
}

pub struct InnerCodec {
    code: RsCode,
    syndrome_table: Vec<[u32; 256]>,
    parity_table: Vec<[u32; 256]>,
    // position of each evaluation point, 0xFF if none
    position_of: [u8; 256],
}

impl std::fmt::Debug for InnerCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InnerCodec").finish_non_exhaustive()
    }
}

fn pack(symbols: &[Symbol]) -> u32 {
    symbols
        .iter()
        .enumerate()
        .fold(0, |acc, (l, &s)| acc | (s as u32) << (8 * l))
}

impl InnerCodec {
    pub fn new(field: std::sync::Arc<Field>) -> Self {
        let spec = CodeSpec::new(field, WIRE_BYTES, PAYLOAD_BYTES).expect("RS(36,32) is valid");
        let code = RsCode::new(spec).expect("RS(36,32) parity map");
        let f = code.field();
        let points = code.spec().eval_points().to_vec();
        let syndrome_table = points
            .iter()
            .map(|&a| {
                let mut t = [0u32; 256];
                for (y, slot) in t.iter_mut().enumerate() {
                    let s: Vec<Symbol> = (0..PARITY_BYTES as u64)
                        .map(|l| f.mul(y as Symbol, f.pow(a, l)))
                        .collect();
                    *slot = pack(&s);
                }
                t
            })
            .collect();
        let parity_table = (0..PAYLOAD_BYTES)
            .map(|j| {
                let mut t = [0u32; 256];
                for (d, slot) in t.iter_mut().enumerate() {
                    let p: Vec<Symbol> = (0..PARITY_BYTES)
                        .map(|l| f.mul(d as Symbol, code.parity_map_entry(l, j)))
                        .collect();
                    *slot = pack(&p);
                }
                t
            })
            .collect();
        let mut position_of = [0xFFu8; 256];
        for (j, &a) in points.iter().enumerate() {
            position_of[a as usize] = j as u8;
        }
        InnerCodec {
            code,
            syndrome_table,
            parity_table,
            position_of,
        }
    }

    /// Shared codec over the default GF(2^8).
    pub fn global() -> &'static InnerCodec {
        static CODEC: OnceLock<InnerCodec> = OnceLock::new();
        CODEC.get_or_init(|| InnerCodec::new(Field::gf256()))
    }

    pub fn code(&self) -> &RsCode {
        &self.code
    }

    pub fn parity(&self, payload: &[u8; PAYLOAD_BYTES]) -> [u8; PARITY_BYTES] {
        let mut acc = 0u32;
        for (t, &b) in self.parity_table.iter().zip(payload) {
            acc ^= t[b as usize];
        }
        acc.to_le_bytes()
    }

    pub fn encode_array(&self, payload: &[u8; PAYLOAD_BYTES]) -> Chunk {
        Chunk {
            payload: *payload,
            parity: self.parity(payload),
        }
    }

    pub fn encode(&self, payload: &[u8]) -> Result<Chunk, InnerError> {
        let p: &[u8; PAYLOAD_BYTES] = payload.try_into().map_err(|_| InnerError::Length {
            expected: PAYLOAD_BYTES,
            got: payload.len(),
        })?;
        Ok(self.encode_array(p))
    }

    /// Packed syndromes `S_0 | S_1 << 8 | S_2 << 16 | S_3 << 24`.
    #[inline]
    pub fn syndrome_word(&self, wire: &[u8; WIRE_BYTES]) -> u32 {
        let mut acc = 0u32;
        for (t, &b) in self.syndrome_table.iter().zip(wire) {
            acc ^= t[b as usize];
        }
        acc
    }

    /// Locate a single-byte error from the syndromes, if they describe one.
    fn single_error(&self, s: u32) -> Option<(usize, u8)> {
        let f = self.code.field();
        let b = s.to_le_bytes().map(|x| x as Symbol);
        if b[0] == 0 || b[1] == 0 {
            return None;
        }
        let a = f.div(b[1], b[0]).ok()?;
        if f.mul(b[1], a) != b[2] || f.mul(b[2], a) != b[3] {
            return None;
        }
        match self.position_of[a as usize] {
            0xFF => None,
            j => Some((j as usize, b[0] as u8)),
        }
    }

    /// Syndrome-driven decode under the given policy.
    pub fn decode_codec(&self, wire: &[u8; WIRE_BYTES], policy: InnerPolicy) -> ChunkVerdict {
        let mut payload = [0u8; PAYLOAD_BYTES];
        payload.copy_from_slice(&wire[..PAYLOAD_BYTES]);
        if policy == InnerPolicy::Off {
            return ChunkVerdict {
                kind: VerdictKind::Clean,
                payload: Some(payload),
            };
        }
        let s = self.syndrome_word(wire);
        if s == 0 {
            return ChunkVerdict {
                kind: VerdictKind::Clean,
                payload: Some(payload),
            };
        }
        if policy == InnerPolicy::DetectOnly {
            return ChunkVerdict::erasure();
        }
        if let Some((j, e)) = self.single_error(s) {
            if j < PAYLOAD_BYTES {
                payload[j] ^= e;
            }
            return ChunkVerdict {
                kind: VerdictKind::Corrected(1),
                payload: Some(payload),
            };
        }
        let symbols: Vec<Symbol> = wire.iter().map(|&b| b as Symbol).collect();
        let out = self
            .code
            .decode_errors(&symbols)
            .expect("36 byte symbols are always in range");
        match (out.status, out.payload) {
            (DecodeStatus::Corrected(n), Some(p)) if n <= CORRECTABLE_BYTES => {
                for (dst, src) in payload.iter_mut().zip(&p) {
                    *dst = *src as u8;
                }
                ChunkVerdict {
                    kind: VerdictKind::Corrected(n as u8),
                    payload: Some(payload),
                }
            }
            _ => ChunkVerdict::erasure(),
        }
    }

    pub fn decode(&self, wire: &[u8; WIRE_BYTES], mode: DecodeMode, policy: InnerPolicy) -> ChunkVerdict {
        match mode {
            DecodeMode::Codec => self.decode_codec(wire, policy),
            DecodeMode::PerfectDetection { faulty_bytes } => {
                let kind = classify(faulty_bytes, policy);
                match kind {
                    VerdictKind::Erasure => ChunkVerdict::erasure(),
                    // With at most two faulty bytes the codec is exact.
                    _ => {
                        let v = self.decode_codec(wire, policy);
                        ChunkVerdict {
                            kind,
                            payload: v.payload,
                        }
                    }
                }
            }
        }
    }

    pub fn decode_slice(
        &self,
        wire: &[u8],
        mode: DecodeMode,
        policy: InnerPolicy,
    ) -> Result<ChunkVerdict, InnerError> {
        let w: &[u8; WIRE_BYTES] = wire.try_into().map_err(|_| InnerError::Length {
            expected: WIRE_BYTES,
            got: wire.len(),
        })?;
        Ok(self.decode(w, mode, policy))
    }
}

/// Verdict implied by a faulty-byte count: the perfect-detection rule.
pub fn classify(faulty_bytes: usize, policy: InnerPolicy) -> VerdictKind {
    match (policy, faulty_bytes) {
        (InnerPolicy::Off, _) | (_, 0) => VerdictKind::Clean,
        (InnerPolicy::DetectOnly, _) => VerdictKind::Erasure,
        (InnerPolicy::Correct, n) if n <= CORRECTABLE_BYTES => VerdictKind::Corrected(n as u8),
        (InnerPolicy::Correct, _) => VerdictKind::Erasure,
    }
}

/// Convenience wrappers over the shared codec.
pub fn inner_encode(payload: &[u8]) -> Result<Chunk, InnerError> {
    InnerCodec::global().encode(payload)
}

pub fn inner_decode(wire: &[u8], mode: DecodeMode) -> Result<ChunkVerdict, InnerError> {
    InnerCodec::global().decode_slice(wire, mode, InnerPolicy::Correct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_payload(rng: &mut impl Rng) -> [u8; 32] {
        let mut p = [0u8; 32];
        rng.fill(&mut p[..]);
        p
    }

    #[test]
    fn tables_match_generic_code() {
        let c = InnerCodec::global();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = random_payload(&mut rng);
            let generic: Vec<Symbol> = c
                .code()
                .parity(&p.map(|b| b as Symbol))
                .unwrap();
            assert_eq!(c.parity(&p).map(|b| b as Symbol).to_vec(), generic);
            let mut wire = [0u8; WIRE_BYTES];
            rng.fill(&mut wire[..]);
            let s = c.code().syndromes(&wire.map(|b| b as Symbol)).unwrap();
            assert_eq!(c.syndrome_word(&wire), pack(&s));
        }
    }

    #[test]
    fn zero_payload_and_linearity() {
        let c = InnerCodec::global();
        assert_eq!(c.parity(&[0; 32]), [0; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = random_payload(&mut rng);
            let b = random_payload(&mut rng);
            let x: Vec<u8> = a.iter().zip(&b).map(|(p, q)| p ^ q).collect();
            let px = c.encode(&x).unwrap().parity;
            let (pa, pb) = (c.parity(&a), c.parity(&b));
            for i in 0..4 {
                assert_eq!(px[i], pa[i] ^ pb[i]);
            }
        }
        assert_eq!(
            c.encode(&[0; 31]),
            Err(InnerError::Length {
                expected: 32,
                got: 31
            })
        );
    }

    #[test]
    fn verdicts_by_corruption_count() {
        let c = InnerCodec::global();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let p = random_payload(&mut rng);
            let clean = c.encode_array(&p).to_wire();
            let v = c.decode(&clean, DecodeMode::Codec, InnerPolicy::Correct);
            assert_eq!(v.kind, VerdictKind::Clean);
            assert_eq!(v.payload, Some(p));

            for t in 1..=2usize {
                let mut w = clean;
                for pos in sample(&mut rng, WIRE_BYTES, t) {
                    w[pos] ^= rng.gen_range(1..=255u8);
                }
                let v = c.decode(&w, DecodeMode::Codec, InnerPolicy::Correct);
                assert_eq!(v.kind, VerdictKind::Corrected(t as u8));
                assert_eq!(v.payload, Some(p));
                let d = c.decode(&w, DecodeMode::Codec, InnerPolicy::DetectOnly);
                assert_eq!(d.kind, VerdictKind::Erasure);
                let o = c.decode(&w, DecodeMode::Codec, InnerPolicy::Off);
                assert_eq!(o.kind, VerdictKind::Clean);
            }

            let mut w = clean;
            for pos in sample(&mut rng, WIRE_BYTES, 3) {
                w[pos] ^= rng.gen_range(1..=255u8);
            }
            let v = c.decode(&w, DecodeMode::PerfectDetection { faulty_bytes: 3 }, InnerPolicy::Correct);
            assert_eq!(v.kind, VerdictKind::Erasure);
            assert_eq!(v.payload, None);
        }
    }

    #[test]
    fn codec_and_perfect_detection_agreement() {
        // Up to two faulty bytes the modes agree exactly. Beyond that the codec
        // miscorrects whenever the word lands in a radius-2 ball around another
        // codeword, which for dense patterns happens with probability close to
        // V(36, 2) / 256^4.
        let c = InnerCodec::global();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ball = 1.0 + 36.0 * 255.0 + 630.0 * 255.0 * 255.0;
        let expected = ball / 2f64.powi(32);
        let trials = 20_000;
        for faulty in 0..=8usize {
            let mut disagree = 0usize;
            for _ in 0..trials {
                let mut w = c.encode_array(&random_payload(&mut rng)).to_wire();
                for pos in sample(&mut rng, WIRE_BYTES, faulty) {
                    w[pos] ^= rng.gen_range(1..=255u8);
                }
                let a = c.decode(&w, DecodeMode::Codec, InnerPolicy::Correct).kind;
                if a != classify(faulty, InnerPolicy::Correct) {
                    disagree += 1;
                }
            }
            if faulty <= 2 {
                assert_eq!(disagree, 0, "faulty={faulty}");
            } else {
                let rate = disagree as f64 / trials as f64;
                let sigma = (expected / trials as f64).sqrt();
                assert!((rate - expected).abs() < 5.0 * sigma + 0.002, "faulty={faulty} rate={rate}");
            }
        }
    }

    #[test]
    fn single_error_fast_path_covers_every_position() {
        let c = InnerCodec::global();
        let p = [0xA5u8; 32];
        let clean = c.encode_array(&p).to_wire();
        for pos in 0..WIRE_BYTES {
            for e in [1u8, 0x80, 0xFF] {
                let mut w = clean;
                w[pos] ^= e;
                assert_eq!(c.single_error(c.syndrome_word(&w)), Some((pos, e)));
                let v = c.decode(&w, DecodeMode::Codec, InnerPolicy::Correct);
                assert_eq!(v.kind, VerdictKind::Corrected(1));
                assert_eq!(v.payload, Some(p));
            }
        }
    }

    #[test]
    fn wire_round_trip() {
        let chunk = inner_encode(&[7u8; 32]).unwrap();
        assert_eq!(Chunk::from_wire(&chunk.to_wire()).unwrap(), chunk);
        assert!(Chunk::from_wire(&[0u8; 35]).is_err());
        let v = inner_decode(&chunk.to_wire(), DecodeMode::Codec).unwrap();
        assert_eq!(v.kind, VerdictKind::Clean);
    }
}
