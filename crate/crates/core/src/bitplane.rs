//! Bit-plane layout: value `j`'s bit `i` lives in plane `i`, byte `j / 8`,
//! bit `j % 8`. Planes in the protected set go through both ECC tiers; the
//! rest bypass the outer code (and by default the inner one too).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inner::{PAYLOAD_BYTES, WIRE_BYTES};
use crate::outer::SpanLayout;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlaneError {
    #[error("block of {0} values is not a multiple of 8")]
    Misaligned(usize),
    #[error("bits per value must be in 1..=64, got {0}")]
    Width(usize),
    #[error("protected plane {plane} outside 0..{n_bits}")]
    Plane { plane: usize, n_bits: usize },
    #[error("stream of {got} bytes, expected {expected}")]
    StreamLength { expected: usize, got: usize },
}

pub const BF16_BITS: usize = 16;
/// Default values per block: a BF16 plane is then exactly one 32 B chunk.
pub const DEFAULT_BLOCK_VALUES: usize = 256;

/// BF16 exponent planes.
pub fn bf16_exponent_planes() -> BTreeSet<usize> {
    (7..=14).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaneBlock {
    pub m: usize,
    pub n_bits: usize,
    pub planes: Vec<Vec<u8>>,
    pub protected: BTreeSet<usize>,
}

impl PlaneBlock {
    pub fn gamma(&self) -> f64 {
        self.protected.len() as f64 / self.n_bits as f64
    }

    pub fn plane_bytes(&self) -> usize {
        self.m / 8
    }
}

pub fn pack_planes(values: &[u64], n_bits: usize, protected: BTreeSet<usize>) -> Result<PlaneBlock, PlaneError> {
    let m = values.len();
    if !m.is_multiple_of(8) {
        return Err(PlaneError::Misaligned(m));
    }
    if n_bits == 0 || n_bits > 64 {
        return Err(PlaneError::Width(n_bits));
    }
    if let Some(&plane) = protected.iter().find(|&&p| p >= n_bits) {
        return Err(PlaneError::Plane { plane, n_bits });
    }
    let mut planes = vec![vec![0u8; m / 8]; n_bits];
    for (j, &v) in values.iter().enumerate() {
        for (i, plane) in planes.iter_mut().enumerate() {
            if v >> i & 1 == 1 {
                plane[j / 8] |= 1 << (j % 8);
            }
        }
    }
    Ok(PlaneBlock {
        m,
        n_bits,
        planes,
        protected,
    })
}

pub fn unpack_planes(block: &PlaneBlock) -> Vec<u64> {
    (0..block.m)
        .map(|j| {
            block
                .planes
                .iter()
                .enumerate()
                .filter(|(_, p)| p[j / 8] >> (j % 8) & 1 == 1)
                .fold(0u64, |v, (i, _)| v | 1 << i)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BypassProtection {
    /// Bypass planes are stored raw.
    #[default]
    None,
    /// Bypass planes keep the inner per-chunk code.
    InnerOnly,
}

impl BypassProtection {
    pub fn wire_factor(&self) -> f64 {
        match self {
            BypassProtection::None => 1.0,
            BypassProtection::InnerOnly => WIRE_BYTES as f64 / PAYLOAD_BYTES as f64,
        }
    }
}

/// Wire bytes per payload byte for a protected fraction `gamma`.
pub fn traffic_factor(gamma: f64, layout: &SpanLayout, bypass: BypassProtection) -> f64 {
    gamma / layout.payload_efficiency() + (1.0 - gamma) * bypass.wire_factor()
}

pub fn eta_for_gamma(gamma: f64, layout: &SpanLayout, bypass: BypassProtection) -> f64 {
    1.0 / traffic_factor(gamma, layout, bypass)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Routed {
    /// Protected planes in ascending plane order.
    pub protected: Vec<u8>,
    /// Bypass planes in ascending plane order.
    pub bypass: Vec<u8>,
    pub traffic_factor: f64,
}

pub fn route_planes(block: &PlaneBlock, layout: &SpanLayout, bypass: BypassProtection) -> Routed {
    let mut protected = Vec::new();
    let mut rest = Vec::new();
    for (i, p) in block.planes.iter().enumerate() {
        if block.protected.contains(&i) {
            protected.extend_from_slice(p);
        } else {
            rest.extend_from_slice(p);
        }
    }
    Routed {
        protected,
        bypass: rest,
        traffic_factor: traffic_factor(block.gamma(), layout, bypass),
    }
}

/// Inverse of [`route_planes`] given the block shape.
pub fn merge_planes(
    protected_stream: &[u8],
    bypass_stream: &[u8],
    m: usize,
    n_bits: usize,
    protected: BTreeSet<usize>,
) -> Result<PlaneBlock, PlaneError> {
    if !m.is_multiple_of(8) {
        return Err(PlaneError::Misaligned(m));
    }
    let pb = m / 8;
    let n_prot = protected.len();
    for (expected, got) in [(n_prot * pb, protected_stream.len()), ((n_bits - n_prot) * pb, bypass_stream.len())] {
        if expected != got {
            return Err(PlaneError::StreamLength { expected, got });
        }
    }
    let (mut a, mut b) = (protected_stream.chunks(pb), bypass_stream.chunks(pb));
    let planes = (0..n_bits)
        .map(|i| {
            let src = if protected.contains(&i) { a.next() } else { b.next() };
            src.unwrap().to_vec()
        })
        .collect();
    Ok(PlaneBlock {
        m,
        n_bits,
        planes,
        protected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{stream_rng, BitFlipper};
    use proptest::prelude::*;

    #[test]
    fn constant_block_planes() {
        let b = pack_planes(&[0x3F80; 16], 16, bf16_exponent_planes()).unwrap();
        for i in 0..16 {
            let expect = if 0x3F80u64 >> i & 1 == 1 { 0xFF } else { 0 };
            assert!(b.planes[i].iter().all(|&x| x == expect), "plane {i}");
        }
        assert_eq!(b.gamma(), 0.5);
    }

    #[test]
    fn one_hot_cases() {
        let mut v = vec![0u64; 8];
        v[5] = 1 << 9;
        let b = pack_planes(&v, 16, BTreeSet::new()).unwrap();
        let set: Vec<(usize, u32)> = b
            .planes
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.iter().map(|x| x.count_ones()).sum()))
            .filter(|&(_, c)| c > 0)
            .collect();
        assert_eq!(set, vec![(9, 1)]);

        let mut zero = pack_planes(&[0; 8], 16, BTreeSet::new()).unwrap();
        assert!(unpack_planes(&zero).iter().all(|&x| x == 0));
        zero.planes[3][0] = 0xFF;
        assert!(unpack_planes(&zero).iter().all(|&x| x == 8));
        assert_eq!(pack_planes(&[0; 7], 16, BTreeSet::new()), Err(PlaneError::Misaligned(7)));
        assert!(pack_planes(&[0; 8], 16, [16].into_iter().collect()).is_err());
    }

    #[test]
    fn traffic_factors() {
        let l = SpanLayout::bandwidth();
        let none = BypassProtection::None;
        assert!((traffic_factor(1.0, &l, none) - 1.2656).abs() < 1e-3);
        assert_eq!(traffic_factor(0.0, &l, none), 1.0);
        let gain = eta_for_gamma(0.5, &l, none) / eta_for_gamma(1.0, &l, none) - 1.0;
        assert!((gain - 0.117).abs() < 0.002, "{gain}");
        assert!((eta_for_gamma(0.5, &l, none) - 0.883).abs() < 0.001);
        assert!(traffic_factor(0.5, &l, BypassProtection::InnerOnly) > traffic_factor(0.5, &l, none));
    }

    #[test]
    fn bypass_faults_leave_protected_planes_alone() {
        let mut rng = stream_rng(3, &[0]);
        let flipper = BitFlipper::new(0.05);
        for _ in 0..50 {
            let values: Vec<u64> = (0..DEFAULT_BLOCK_VALUES).map(|_| rand::Rng::gen_range(&mut rng, 0..1 << 16)).collect();
            let block = pack_planes(&values, 16, bf16_exponent_planes()).unwrap();
            let routed = route_planes(&block, &SpanLayout::bandwidth(), BypassProtection::None);
            assert_eq!(routed.protected.len(), 8 * PAYLOAD_BYTES);
            let mut noisy = routed.bypass.clone();
            flipper.flip(&mut noisy, &mut rng);
            let back = merge_planes(&routed.protected, &noisy, 256, 16, bf16_exponent_planes()).unwrap();
            let mask: u64 = (7..=14).map(|i| 1u64 << i).sum();
            for (a, b) in values.iter().zip(unpack_planes(&back)) {
                assert_eq!(a & mask, b & mask);
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(n_bits in 1usize..=64, blocks in 1usize..6, seed in any::<u64>()) {
            let mut rng = stream_rng(seed, &[]);
            let m = 8 * blocks;
            let mask = if n_bits == 64 { u64::MAX } else { (1u64 << n_bits) - 1 };
            let values: Vec<u64> = (0..m).map(|_| rand::Rng::gen::<u64>(&mut rng) & mask).collect();
            let prot: BTreeSet<usize> = (0..n_bits).filter(|i| i % 3 == 0).collect();
            let b = pack_planes(&values, n_bits, prot.clone()).unwrap();
            prop_assert_eq!(&unpack_planes(&b), &values);
            prop_assert_eq!(&pack_planes(&unpack_planes(&b), n_bits, prot.clone()).unwrap(), &b);
            let r = route_planes(&b, &SpanLayout::bandwidth(), BypassProtection::None);
            prop_assert_eq!(merge_planes(&r.protected, &r.bypass, m, n_bits, prot).unwrap(), b);
        }

        #[test]
        fn eta_monotone_in_gamma(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let l = SpanLayout::bandwidth();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(eta_for_gamma(hi, &l, BypassProtection::None) <= eta_for_gamma(lo, &l, BypassProtection::None));
        }
    }
}
