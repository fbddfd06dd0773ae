//! Binary extension field arithmetic, GF(2^m) for m up to 16.
//!
//! Elements are stored as `u16` with bit `i` holding the coefficient of `x^i`.
//! Addition is XOR. Multiplication goes through log/antilog tables built
//! once per field; [`mul_bitwise`] is the carry-less multiply + reduce
//! reference the tables are checked against.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One field symbol. Only the low `m` bits are meaningful.
pub type Symbol = u16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("unsupported symbol width m={0} (expected 2..=16)")]
    UnsupportedWidth(u32),
    #[error("primitive polynomial {poly:#x} does not have degree {m}")]
    PolyDegree { poly: u32, m: u32 },
    #[error("element {value:#x} is outside GF(2^{m})")]
    OutOfRange { value: u32, m: u32 },
    #[error("generator {generator:#x} is not primitive under polynomial {poly:#x}")]
    NotPrimitive { generator: Symbol, poly: u32 },
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("logarithm of zero is undefined")]
    ZeroLog,
}

/// Parameters of a field: symbol width, reduction polynomial (degree-m term
/// included) and the primitive element used for evaluation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    pub m: u32,
    pub primitive_poly: u32,
    pub generator: Symbol,
}

impl FieldSpec {
    /// GF(2^8) with x^8 + x^4 + x^3 + x^2 + 1.
    pub const GF256: FieldSpec = FieldSpec {
        m: 8,
        primitive_poly: 0x11D,
        generator: 0x02,
    };

    /// GF(2^16) with x^16 + x^12 + x^3 + x + 1.
    pub const GF65536: FieldSpec = FieldSpec {
        m: 16,
        primitive_poly: 0x1100B,
        generator: 0x02,
    };

    pub fn new(m: u32, primitive_poly: u32, generator: Symbol) -> Result<Self, FieldError> {
        if !(2..=16).contains(&m) {
            return Err(FieldError::UnsupportedWidth(m));
        }
        if primitive_poly >> m != 1 {
            return Err(FieldError::PolyDegree {
                poly: primitive_poly,
                m,
            });
        }
        if generator == 0 || u32::from(generator) >> m != 0 {
            return Err(FieldError::OutOfRange {
                value: generator.into(),
                m,
            });
        }
        Ok(FieldSpec {
            m,
            primitive_poly,
            generator,
        })
    }

    /// Number of field elements, 2^m.
    pub fn size(&self) -> usize {
        1usize << self.m
    }

    /// Order of the multiplicative group, 2^m - 1.
    pub fn order(&self) -> usize {
        self.size() - 1
    }

    pub fn contains(&self, value: u32) -> bool {
        value >> self.m == 0
    }
}

/// Carry-less multiply followed by reduction modulo the field polynomial,
/// one bit at a time. Independent of the tables in [`Field`].
pub fn mul_bitwise(a: Symbol, b: Symbol, spec: &FieldSpec) -> Symbol {
    let mut product: u32 = 0;
    let (a, b) = (u32::from(a), u32::from(b));
    for i in 0..spec.m {
        if b >> i & 1 == 1 {
            product ^= a << i;
        }
    }
    for bit in (spec.m..2 * spec.m).rev() {
        if product >> bit & 1 == 1 {
            product ^= spec.primitive_poly << (bit - spec.m);
        }
    }
    product as Symbol
}

/// Table-driven field. Immutable after construction; share through `Arc`.
#[derive(Debug, Clone)]
pub struct Field {
    spec: FieldSpec,
    // exp[i] = g^i for i in 0..2*order, doubled so log sums need no modulo.
    exp: Vec<Symbol>,
    log: Vec<u32>,
}

impl Field {
    pub fn new(spec: FieldSpec) -> Result<Self, FieldError> {
        let spec = FieldSpec::new(spec.m, spec.primitive_poly, spec.generator)?;
        let order = spec.order();
        let mut exp = vec![0 as Symbol; 2 * order];
        let mut log = vec![0u32; spec.size()];
        let mut x: Symbol = 1;
        for (i, slot) in exp.iter_mut().take(order).enumerate() {
            if i > 0 && x == 1 {
                return Err(FieldError::NotPrimitive {
                    generator: spec.generator,
                    poly: spec.primitive_poly,
                });
            }
            *slot = x;
            log[x as usize] = i as u32;
            x = mul_bitwise(x, spec.generator, &spec);
        }
        if x != 1 {
            return Err(FieldError::NotPrimitive {
                generator: spec.generator,
                poly: spec.primitive_poly,
            });
        }
        exp.copy_within(0..order, order);
        Ok(Field { spec, exp, log })
    }

    /// Shared default GF(2^8).
    pub fn gf256() -> Arc<Field> {
        static FIELD: OnceLock<Arc<Field>> = OnceLock::new();
        FIELD
            .get_or_init(|| Arc::new(Field::new(FieldSpec::GF256).expect("default GF(2^8)")))
            .clone()
    }

    /// Shared default GF(2^16).
    pub fn gf65536() -> Arc<Field> {
        static FIELD: OnceLock<Arc<Field>> = OnceLock::new();
        FIELD
            .get_or_init(|| Arc::new(Field::new(FieldSpec::GF65536).expect("default GF(2^16)")))
            .clone()
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn order(&self) -> usize {
        self.spec.order()
    }

    #[inline]
    pub fn mul(&self, a: Symbol, b: Symbol) -> Symbol {
        if a == 0 || b == 0 {
            return 0;
        }
        self.exp[(self.log[a as usize] + self.log[b as usize]) as usize]
    }

    pub fn inv(&self, a: Symbol) -> Result<Symbol, FieldError> {
        if a == 0 {
            return Err(FieldError::ZeroInverse);
        }
        let order = self.order() as u32;
        Ok(self.exp[((order - self.log[a as usize]) % order) as usize])
    }

    pub fn div(&self, a: Symbol, b: Symbol) -> Result<Symbol, FieldError> {
        let b_inv = self.inv(b)?;
        Ok(self.mul(a, b_inv))
    }

    /// g^i for any exponent (reduced modulo the group order).
    #[inline]
    pub fn exp(&self, i: usize) -> Symbol {
        self.exp[i % self.order()]
    }

    pub fn log(&self, a: Symbol) -> Result<usize, FieldError> {
        if a == 0 {
            return Err(FieldError::ZeroLog);
        }
        Ok(self.log[a as usize] as usize)
    }

    /// Discrete log without the zero check; callers guarantee `a != 0`.
    #[inline]
    pub(crate) fn log_unchecked(&self, a: Symbol) -> u32 {
        debug_assert!(a != 0);
        self.log[a as usize]
    }

    /// Antilog over the doubled table; valid for `i < 2 * order`.
    #[inline]
    pub(crate) fn exp_raw(&self, i: usize) -> Symbol {
        self.exp[i]
    }

    pub fn pow(&self, a: Symbol, e: u64) -> Symbol {
        if e == 0 {
            return 1;
        }
        if a == 0 {
            return 0;
        }
        let order = self.order() as u64;
        let l = u64::from(self.log[a as usize]) * (e % order) % order;
        self.exp[l as usize]
    }

    /// Horner evaluation of `sum coeffs[i] * x^i`.
    pub fn poly_eval(&self, coeffs: &[Symbol], x: Symbol) -> Symbol {
        coeffs
            .iter()
            .rev()
            .fold(0, |acc, &c| self.mul(acc, x) ^ c)
    }

    pub fn contains(&self, a: Symbol) -> bool {
        self.spec.contains(a.into())
    }

    // Flips one antilog entry so the self-test can prove it notices.
    #[doc(hidden)]
    pub fn corrupt_exp_entry(&mut self, index: usize) {
        let order = self.order();
        let i = index % order;
        let bad = self.exp[i] ^ 1;
        self.exp[i] = bad;
        self.exp[i + order] = bad;
    }
}

/// Multiply two polynomials (coefficient vectors, lowest degree first).
pub fn poly_mul(field: &Field, a: &[Symbol], b: &[Symbol]) -> Vec<Symbol> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] ^= field.mul(ai, bj);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Extended Euclid over GF(2)[x], independent of the tables.
    fn inv_euclid(a: u32, spec: &FieldSpec) -> u32 {
        fn deg(p: u32) -> i32 {
            31 - p.leading_zeros() as i32
        }
        let (mut r0, mut r1) = (spec.primitive_poly, a);
        let (mut s0, mut s1) = (0u32, 1u32);
        while r1 != 0 {
            let mut q = 0u32;
            let mut r = r0;
            while r != 0 && deg(r) >= deg(r1) {
                let shift = deg(r) - deg(r1);
                q ^= 1 << shift;
                r ^= r1 << shift;
            }
            let mut qs = 0u32;
            for i in 0..32 {
                if q >> i & 1 == 1 {
                    qs ^= s1 << i;
                }
            }
            (r0, r1) = (r1, r);
            (s0, s1) = (s1, s0 ^ qs);
        }
        // r0 is the gcd (1); reduce s0 modulo the polynomial.
        let mut s = s0;
        while s != 0 && deg(s) >= spec.m as i32 {
            s ^= spec.primitive_poly << (deg(s) - spec.m as i32);
        }
        s
    }

    #[test]
    fn mul_examples() {
        let f = Field::gf256();
        assert_eq!(f.mul(0x53, 0x01), 0x53);
        assert_eq!(f.mul(0x00, 0xFF), 0x00);
        assert_eq!(mul_bitwise(0x02, 0x80, &FieldSpec::GF256), 0x1D);
        assert_eq!(f.mul(0x02, 0x80), 0x1D);
    }

    #[test]
    fn inv_examples() {
        let f = Field::gf256();
        assert_eq!(f.inv(0x01).unwrap(), 0x01);
        assert_eq!(inv_euclid(0x02, &FieldSpec::GF256), 0x8E);
        assert_eq!(f.inv(0x02).unwrap(), 0x8E);
        assert_eq!(mul_bitwise(0x02, 0x8E, &FieldSpec::GF256), 0x01);
        assert_eq!(f.inv(0x00), Err(FieldError::ZeroInverse));
    }

    #[test]
    fn tables_match_bitwise_oracle_exhaustively_gf256() {
        let f = Field::gf256();
        for a in 0..=255u16 {
            for b in 0..=255u16 {
                assert_eq!(f.mul(a, b), mul_bitwise(a, b, f.spec()), "{a:#x}*{b:#x}");
            }
        }
    }

    #[test]
    fn tables_match_bitwise_oracle_sampled_gf65536() {
        let f = Field::gf65536();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1_000_000 {
            let a: u16 = rng.gen();
            let b: u16 = rng.gen();
            assert_eq!(f.mul(a, b), mul_bitwise(a, b, f.spec()));
        }
    }

    #[test]
    fn inverse_matches_euclid() {
        let f = Field::gf256();
        for a in 1..=255u16 {
            assert_eq!(u32::from(f.inv(a).unwrap()), inv_euclid(a.into(), f.spec()));
        }
        let g = Field::gf65536();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let a: u16 = rng.gen_range(1..=u16::MAX);
            assert_eq!(u32::from(g.inv(a).unwrap()), inv_euclid(a.into(), g.spec()));
            assert_eq!(g.mul(a, g.inv(a).unwrap()), 1);
        }
    }

    #[test]
    fn multiplication_by_nonzero_is_bijective_gf256() {
        let f = Field::gf256();
        for a in 1..=255u16 {
            let mut seen = [false; 256];
            for b in 0..=255u16 {
                let p = f.mul(a, b) as usize;
                assert!(!seen[p]);
                seen[p] = true;
            }
        }
    }

    #[test]
    fn multiplication_by_nonzero_is_injective_sampled_gf65536() {
        let f = Field::gf65536();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..4 {
            let a: u16 = rng.gen_range(1..=u16::MAX);
            let mut seen = vec![false; 1 << 16];
            for b in 0..=u16::MAX {
                let p = f.mul(a, b) as usize;
                assert!(!seen[p]);
                seen[p] = true;
            }
        }
    }

    #[test]
    fn poly_eval_cases() {
        let f = Field::gf256();
        assert_eq!(f.poly_eval(&[0x37], 0x99), 0x37);
        assert_eq!(f.poly_eval(&[0x01, 0x01], 0x02), 0x03);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let coeffs: Vec<u16> = (0..6).map(|_| rng.gen_range(0..256)).collect();
            let x: u16 = rng.gen_range(0..256);
            let mut naive = 0u16;
            for (i, &c) in coeffs.iter().enumerate() {
                let mut xp = 1u16;
                for _ in 0..i {
                    xp = mul_bitwise(xp, x, f.spec());
                }
                naive ^= mul_bitwise(c, xp, f.spec());
            }
            assert_eq!(f.poly_eval(&coeffs, x), naive);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert_eq!(FieldSpec::new(8, 0x1D, 2), Err(FieldError::PolyDegree { poly: 0x1D, m: 8 }));
        assert_eq!(FieldSpec::new(17, 0x2_0000, 2), Err(FieldError::UnsupportedWidth(17)));
        // x^8+x^4+x^3+x+1 (AES) is irreducible but 2 is not primitive there.
        assert!(matches!(
            Field::new(FieldSpec { m: 8, primitive_poly: 0x11B, generator: 2 }),
            Err(FieldError::NotPrimitive { .. })
        ));
        assert!(Field::new(FieldSpec { m: 8, primitive_poly: 0x11B, generator: 3 }).is_ok());
    }

    #[test]
    fn generator_enumerates_group() {
        let f = Field::gf256();
        let mut seen = [false; 256];
        for i in 0..255 {
            let v = f.exp(i) as usize;
            assert!(!seen[v] && v != 0);
            seen[v] = true;
        }
    }

    proptest::proptest! {
        #[test]
        fn mul_distributes_over_xor(a in 0u16.., b in 0u16.., c in 0u16..) {
            let f = Field::gf65536();
            proptest::prop_assert_eq!(f.mul(a, b ^ c), f.mul(a, b) ^ f.mul(a, c));
            proptest::prop_assert_eq!(f.mul(a, b), f.mul(b, a));
            proptest::prop_assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
        }
    }
}
