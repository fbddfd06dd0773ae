//! Systematic Reed-Solomon codes over any [`Field`].
//!
//! A codeword `y` of length `n` is valid when every check
//! `S_l = sum_j y_j * a_j^l` (`l = 0..r`) vanishes. Data sits at positions
//! `0..k`, parity at `k..n`; the parity map is the `r x k` matrix that
//! zeroes the checks for any data vector.
//!
//! Decoding follows the usual pipeline: syndromes, key equation
//! (Berlekamp-Massey on erasure-modified syndromes), root search over the
//! evaluation points, Forney magnitudes. The erasure-only entry point skips
//! the key equation and the root search entirely, which [`StageWork`]
//! records.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf::{poly_mul, Field, FieldError, Symbol};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error("invalid code parameters n={n}, k={k} (need 0 < k < n <= {max})")]
    InvalidParameters { n: usize, k: usize, max: usize },
    #[error("expected {expected} evaluation points, got {got}")]
    EvalPointCount { expected: usize, got: usize },
    #[error("evaluation points must be distinct and nonzero (position {0})")]
    EvalPointInvalid(usize),
    #[error("length mismatch: expected {expected} symbols, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("symbol {value:#x} at position {position} is outside the field")]
    SymbolOutOfRange { position: usize, value: Symbol },
    #[error("erasure position {position} out of range for n={n}")]
    PositionOutOfRange { position: usize, n: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Parameters of one code: field, length, dimension and evaluation points.
#[derive(Debug, Clone)]
pub struct CodeSpec {
    field: Arc<Field>,
    n: usize,
    k: usize,
    eval_points: Vec<Symbol>,
}

impl CodeSpec {
    /// Code with evaluation points `a_j = g^j`.
    pub fn new(field: Arc<Field>, n: usize, k: usize) -> Result<Self, CodeError> {
        let points = (0..n).map(|j| field.exp(j)).collect();
        Self::with_eval_points(field, n, k, points)
    }

    pub fn with_eval_points(
        field: Arc<Field>,
        n: usize,
        k: usize,
        eval_points: Vec<Symbol>,
    ) -> Result<Self, CodeError> {
        let max = field.order();
        if k == 0 || k >= n || n > max {
            return Err(CodeError::InvalidParameters { n, k, max });
        }
        if eval_points.len() != n {
            return Err(CodeError::EvalPointCount {
                expected: n,
                got: eval_points.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for (j, &a) in eval_points.iter().enumerate() {
            if a == 0 || !field.contains(a) || !seen.insert(a) {
                return Err(CodeError::EvalPointInvalid(j));
            }
        }
        Ok(CodeSpec {
            field,
            n,
            k,
            eval_points,
        })
    }

    pub fn field(&self) -> &Arc<Field> {
        &self.field
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> usize {
        self.n - self.k
    }

    pub fn eval_points(&self) -> &[Symbol] {
        &self.eval_points
    }
}

/// Operation counts per decoder stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageWork {
    pub syndrome: u64,
    pub key_equation: u64,
    pub locate: u64,
    pub correct: u64,
}

impl StageWork {
    pub fn total(&self) -> u64 {
        self.syndrome + self.key_equation + self.locate + self.correct
    }

    pub fn add(&mut self, other: &StageWork) {
        self.syndrome += other.syndrome;
        self.key_equation += other.key_equation;
        self.locate += other.locate;
        self.correct += other.correct;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    /// More erasures than parity symbols.
    ErasureBudget,
    /// Locator degree exceeds what the syndromes can pin down.
    KeyEquation,
    /// Root search found a different number of roots than the locator degree.
    RootCount,
    /// Forney denominator vanished.
    Magnitude,
    /// The corrected word still has nonzero syndromes.
    Verification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStatus {
    Clean,
    Corrected(usize),
    Failure(FailureReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub status: DecodeStatus,
    /// The `k` data symbols, absent on failure.
    pub payload: Option<Vec<Symbol>>,
    /// Full corrected codeword, absent on failure.
    pub codeword: Option<Vec<Symbol>>,
    pub work: StageWork,
}

impl DecodeOutcome {
    fn failure(reason: FailureReason, work: StageWork) -> Self {
        DecodeOutcome {
            status: DecodeStatus::Failure(reason),
            payload: None,
            codeword: None,
            work,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self.status, DecodeStatus::Failure(_))
    }
}

const NO_LOG: u32 = u32::MAX;

/// An instantiated code with its parity map precomputed.
#[derive(Debug, Clone)]
pub struct RsCode {
    spec: CodeSpec,
    // parity_log[j * r + l] = log G[l][j], NO_LOG for zero entries.
    parity_log: Vec<u32>,
    point_log: Vec<u32>,
}

impl RsCode {
    pub fn new(spec: CodeSpec) -> Result<Self, CodeError> {
        let field = spec.field.clone();
        let (k, r) = (spec.k, spec.r());
        let point_log: Vec<u32> = spec
            .eval_points
            .iter()
            .map(|&a| field.log(a).map(|l| l as u32))
            .collect::<Result<_, _>>()?;

        // Solve V * G = H_data where V[l][i] = a_{k+i}^l and H_data[l][j] = a_j^l.
        let mut aug: Vec<Vec<Symbol>> = (0..r)
            .map(|l| {
                let mut row = Vec::with_capacity(r + k);
                row.extend((0..r).map(|i| field.pow(spec.eval_points[k + i], l as u64)));
                row.extend((0..k).map(|j| field.pow(spec.eval_points[j], l as u64)));
                row
            })
            .collect();
        for col in 0..r {
            let pivot = (col..r)
                .find(|&row| aug[row][col] != 0)
                .expect("Vandermonde system over distinct points is nonsingular");
            aug.swap(col, pivot);
            let inv = field.inv(aug[col][col])?;
            for v in aug[col].iter_mut() {
                *v = field.mul(*v, inv);
            }
            let pivot_row = aug[col].clone();
            for (row, cells) in aug.iter_mut().enumerate() {
                let factor = cells[col];
                if row == col || factor == 0 {
                    continue;
                }
                for (c, p) in cells.iter_mut().zip(&pivot_row) {
                    *c ^= field.mul(factor, *p);
                }
            }
        }
        let mut parity_log = vec![NO_LOG; k * r];
        for (l, row) in aug.iter().enumerate() {
            for j in 0..k {
                let g = row[r + j];
                if g != 0 {
                    parity_log[j * r + l] = field.log_unchecked(g);
                }
            }
        }
        Ok(RsCode {
            spec,
            parity_log,
            point_log,
        })
    }

    pub fn spec(&self) -> &CodeSpec {
        &self.spec
    }

    pub fn field(&self) -> &Field {
        &self.spec.field
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn r(&self) -> usize {
        self.spec.r()
    }

    /// Entry `G[l][j]` of the parity map.
    pub fn parity_map_entry(&self, l: usize, j: usize) -> Symbol {
        match self.parity_log[j * self.r() + l] {
            NO_LOG => 0,
            lg => self.field().exp_raw(lg as usize),
        }
    }

    fn check_symbols(&self, symbols: &[Symbol], expected: usize) -> Result<(), CodeError> {
        if symbols.len() != expected {
            return Err(CodeError::LengthMismatch {
                expected,
                got: symbols.len(),
            });
        }
        if let Some((position, &value)) = symbols
            .iter()
            .enumerate()
            .find(|(_, &v)| !self.field().contains(v))
        {
            return Err(CodeError::SymbolOutOfRange { position, value });
        }
        Ok(())
    }

    /// Add `G[:, column] * value` into `parity`.
    #[inline]
    pub fn accumulate_parity(&self, parity: &mut [Symbol], column: usize, value: Symbol) {
        if value == 0 {
            return;
        }
        let field = self.field();
        let r = self.r();
        let lv = field.log_unchecked(value) as usize;
        let col = &self.parity_log[column * r..(column + 1) * r];
        for (p, &lg) in parity.iter_mut().zip(col) {
            if lg != NO_LOG {
                *p ^= field.exp_raw(lv + lg as usize);
            }
        }
    }

    /// `P = G D` for a full data vector.
    pub fn parity(&self, data: &[Symbol]) -> Result<Vec<Symbol>, CodeError> {
        self.check_symbols(data, self.k())?;
        let mut parity = vec![0; self.r()];
        for (j, &d) in data.iter().enumerate() {
            self.accumulate_parity(&mut parity, j, d);
        }
        Ok(parity)
    }

    pub fn encode(&self, data: &[Symbol]) -> Result<Vec<Symbol>, CodeError> {
        let parity = self.parity(data)?;
        let mut codeword = Vec::with_capacity(self.n());
        codeword.extend_from_slice(data);
        codeword.extend_from_slice(&parity);
        Ok(codeword)
    }

    fn syndromes_unchecked(&self, received: &[Symbol]) -> Vec<Symbol> {
        let field = self.field();
        let r = self.r();
        let order = field.order();
        let mut s = vec![0; r];
        for (j, &y) in received.iter().enumerate() {
            if y == 0 {
                continue;
            }
            let step = self.point_log[j] as usize;
            let mut lg = field.log_unchecked(y) as usize;
            for sl in s.iter_mut() {
                *sl ^= field.exp_raw(lg);
                lg += step;
                if lg >= order {
                    lg -= order;
                }
            }
        }
        s
    }

    /// `S_l = sum_j y_j * a_j^l` for `l = 0..r`.
    pub fn syndromes(&self, received: &[Symbol]) -> Result<Vec<Symbol>, CodeError> {
        self.check_symbols(received, self.n())?;
        Ok(self.syndromes_unchecked(received))
    }

    pub fn is_codeword(&self, received: &[Symbol]) -> Result<bool, CodeError> {
        Ok(self.syndromes(received)?.iter().all(|&s| s == 0))
    }

    /// Unknown-position error correction, up to `floor(r/2)` symbols.
    pub fn decode_errors(&self, received: &[Symbol]) -> Result<DecodeOutcome, CodeError> {
        self.decode_inner(received, &[], true)
    }

    /// Erasure-only repair: the key equation and root search never run.
    /// Symbols at erased positions are ignored.
    pub fn decode_erasures(
        &self,
        received: &[Symbol],
        erasures: &[usize],
    ) -> Result<DecodeOutcome, CodeError> {
        self.decode_inner(received, erasures, false)
    }

    /// Combined errors-and-erasures decoding within `2t + e <= r`.
    pub fn decode(&self, received: &[Symbol], erasures: &[usize]) -> Result<DecodeOutcome, CodeError> {
        self.decode_inner(received, erasures, true)
    }

    fn decode_inner(
        &self,
        received: &[Symbol],
        erasures: &[usize],
        locate: bool,
    ) -> Result<DecodeOutcome, CodeError> {
        self.check_symbols(received, self.n())?;
        let (n, r) = (self.n(), self.r());
        let mut erased: Vec<usize> = erasures.to_vec();
        erased.sort_unstable();
        erased.dedup();
        if let Some(&position) = erased.iter().find(|&&p| p >= n) {
            return Err(CodeError::PositionOutOfRange { position, n });
        }
        let mut work = StageWork::default();
        if erased.len() > r {
            return Ok(DecodeOutcome::failure(FailureReason::ErasureBudget, work));
        }

        let field = self.field();
        let mut word = received.to_vec();
        for &p in &erased {
            word[p] = 0;
        }
        let synd = self.syndromes_unchecked(&word);
        work.syndrome += (n * r) as u64;

        if synd.iter().all(|&s| s == 0) {
            // With erasures the zeroed word is already consistent: every erased
            // symbol was zero.
            let status = if erased.is_empty() {
                DecodeStatus::Clean
            } else {
                DecodeStatus::Corrected(erased.len())
            };
            return Ok(DecodeOutcome {
                status,
                payload: Some(word[..self.k()].to_vec()),
                codeword: Some(word),
                work,
            });
        }

        // Erasure locator Gamma(x) = prod (1 + a_p x).
        let mut gamma: Vec<Symbol> = vec![1];
        for &p in &erased {
            gamma = poly_mul(field, &gamma, &[1, self.spec.eval_points[p]]);
        }

        let mut locator = gamma.clone();
        let mut errata: Vec<usize> = erased.clone();
        if locate {
            // Forney syndromes T_l = sum_i Gamma_i S_{l-i}, l = e..r.
            let e = erased.len();
            let mut modified = Vec::with_capacity(r - e);
            for l in e..r {
                let mut t = 0;
                for (i, &g) in gamma.iter().enumerate() {
                    t ^= field.mul(g, synd[l - i]);
                }
                modified.push(t);
            }
            work.key_equation += ((r - e) * (e + 1)) as u64;
            let (sigma, degree) = berlekamp_massey(field, &modified, &mut work);
            if 2 * degree > r - e {
                return Ok(DecodeOutcome::failure(FailureReason::KeyEquation, work));
            }
            if degree > 0 {
                let mut roots = Vec::with_capacity(degree);
                for j in 0..n {
                    let inv = field.inv(self.spec.eval_points[j])?;
                    work.locate += sigma.len() as u64;
                    if field.poly_eval(&sigma, inv) == 0 {
                        roots.push(j);
                    }
                }
                if roots.len() != degree || roots.iter().any(|p| erased.binary_search(p).is_ok()) {
                    return Ok(DecodeOutcome::failure(FailureReason::RootCount, work));
                }
                locator = poly_mul(field, &gamma, &sigma);
                errata.extend(roots);
            }
        }

        // Omega = S * Psi mod x^r; E_i = Z_i * Omega(Z_i^-1) / Psi'(Z_i^-1).
        let mut omega = poly_mul(field, &synd, &locator);
        omega.truncate(r);
        let derivative: Vec<Symbol> = locator
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, &c)| if i % 2 == 1 { c } else { 0 })
            .collect();
        for &p in &errata {
            let z = self.spec.eval_points[p];
            let z_inv = field.inv(z)?;
            let denom = field.poly_eval(&derivative, z_inv);
            if denom == 0 {
                return Ok(DecodeOutcome::failure(FailureReason::Magnitude, work));
            }
            let num = field.mul(z, field.poly_eval(&omega, z_inv));
            word[p] ^= field.div(num, denom)?;
            work.correct += 1;
        }

        work.syndrome += (n * r) as u64;
        if self.syndromes_unchecked(&word).iter().any(|&s| s != 0) {
            return Ok(DecodeOutcome::failure(FailureReason::Verification, work));
        }
        let corrected = errata
            .iter()
            .filter(|&&p| erased.binary_search(&p).is_ok() || word[p] != received[p])
            .count();
        Ok(DecodeOutcome {
            status: DecodeStatus::Corrected(corrected.max(1)),
            payload: Some(word[..self.k()].to_vec()),
            codeword: Some(word),
            work,
        })
    }
}

/// Shortest LFSR generating `synd`; returns the connection polynomial
/// (constant term 1) and its length `L`.
fn berlekamp_massey(field: &Field, synd: &[Symbol], work: &mut StageWork) -> (Vec<Symbol>, usize) {
    let mut c: Vec<Symbol> = vec![1];
    let mut b: Vec<Symbol> = vec![1];
    let mut l = 0usize;
    let mut shift = 1usize;
    let mut b_disc: Symbol = 1;
    for n in 0..synd.len() {
        let mut d = synd[n];
        for i in 1..=l.min(c.len() - 1) {
            d ^= field.mul(c[i], synd[n - i]);
        }
        work.key_equation += (l + 1) as u64;
        if d == 0 {
            shift += 1;
            continue;
        }
        let coef = field.mul(d, field.inv(b_disc).expect("nonzero discrepancy"));
        let mut next = c.clone();
        if next.len() < b.len() + shift {
            next.resize(b.len() + shift, 0);
        }
        for (i, &bi) in b.iter().enumerate() {
            next[i + shift] ^= field.mul(coef, bi);
        }
        if 2 * l <= n {
            b = std::mem::replace(&mut c, next);
            l = n + 1 - l;
            b_disc = d;
            shift = 1;
        } else {
            c = next;
            shift += 1;
        }
    }
    while c.len() > 1 && *c.last().unwrap() == 0 {
        c.pop();
    }
    // A locator whose true degree is below L cannot have L distinct roots;
    // the root-count check downstream rejects it.
    (c, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf::mul_bitwise;
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn code(n: usize, k: usize) -> RsCode {
        RsCode::new(CodeSpec::new(Field::gf256(), n, k).unwrap()).unwrap()
    }

    fn random_data(rng: &mut impl Rng, code: &RsCode) -> Vec<Symbol> {
        let max = code.field().spec().size() as u32;
        (0..code.k()).map(|_| rng.gen_range(0..max) as Symbol).collect()
    }

    fn corrupt(rng: &mut impl Rng, word: &mut [Symbol], positions: &[usize], size: u32) {
        for &p in positions {
            word[p] ^= rng.gen_range(1..size) as Symbol;
        }
    }

    #[test]
    fn zero_data_has_zero_parity() {
        let c = code(36, 32);
        assert!(c.parity(&[0; 32]).unwrap().iter().all(|&p| p == 0));
    }

    #[test]
    fn unit_vectors_give_parity_columns_and_encoding_is_linear() {
        let c = code(20, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..12 {
            let mut e = vec![0; 12];
            e[i] = 1;
            let p = c.parity(&e).unwrap();
            for (l, &pl) in p.iter().enumerate() {
                assert_eq!(pl, c.parity_map_entry(l, i));
            }
        }
        let a = random_data(&mut rng, &c);
        let b = random_data(&mut rng, &c);
        let sum: Vec<Symbol> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let pa = c.parity(&a).unwrap();
        let pb = c.parity(&b).unwrap();
        let ps = c.parity(&sum).unwrap();
        for l in 0..c.r() {
            assert_eq!(ps[l], pa[l] ^ pb[l]);
        }
    }

    #[test]
    fn syndromes_single_error_and_naive_oracle() {
        let c = code(36, 32);
        let f = c.field();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut word = c.encode(&random_data(&mut rng, &c)).unwrap();
        assert!(c.syndromes(&word).unwrap().iter().all(|&s| s == 0));

        let (j, e) = (17usize, 0x5Au16);
        word[j] ^= e;
        let s = c.syndromes(&word).unwrap();
        for (l, &sl) in s.iter().enumerate() {
            assert_eq!(sl, f.mul(e, f.pow(c.spec().eval_points()[j], l as u64)));
        }

        // Direct double loop with the bitwise multiplier.
        for _ in 0..50 {
            let received: Vec<Symbol> = (0..36).map(|_| rng.gen_range(0..256)).collect();
            let s = c.syndromes(&received).unwrap();
            for l in 0..c.r() {
                let mut acc = 0;
                for (j, &y) in received.iter().enumerate() {
                    let mut p = 1;
                    for _ in 0..l {
                        p = mul_bitwise(p, c.spec().eval_points()[j], f.spec());
                    }
                    acc ^= mul_bitwise(y, p, f.spec());
                }
                assert_eq!(s[l], acc);
            }
        }
    }

    #[test]
    fn corrects_up_to_half_r_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, k) in [(36, 32), (40, 24), (255, 223)] {
            let c = code(n, k);
            for _ in 0..300 {
                let data = random_data(&mut rng, &c);
                let clean = c.encode(&data).unwrap();
                let out = c.decode_errors(&clean).unwrap();
                assert_eq!(out.status, DecodeStatus::Clean);
                assert_eq!(out.payload.as_deref(), Some(&data[..]));

                let t = rng.gen_range(1..=c.r() / 2);
                let positions = sample(&mut rng, n, t).into_vec();
                let mut word = clean.clone();
                corrupt(&mut rng, &mut word, &positions, 256);
                let out = c.decode_errors(&word).unwrap();
                assert_eq!(out.status, DecodeStatus::Corrected(t), "n={n} t={t}");
                assert_eq!(out.payload.as_deref(), Some(&data[..]));
            }
        }
    }

    #[test]
    fn beyond_capacity_fails_or_miscorrects_rarely() {
        // RS(36,32) with 3 errors: the decoder either fails or lands on another
        // codeword within distance 2. Count how often the latter happens.
        let c = code(36, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trials = 20_000;
        let mut miscorrect = 0;
        for _ in 0..trials {
            let data = random_data(&mut rng, &c);
            let mut word = c.encode(&data).unwrap();
            let positions = sample(&mut rng, 36, 3).into_vec();
            corrupt(&mut rng, &mut word, &positions, 256);
            let out = c.decode_errors(&word).unwrap();
            match out.status {
                DecodeStatus::Failure(_) => {}
                DecodeStatus::Corrected(_) => {
                    assert_ne!(out.payload.as_deref(), Some(&data[..]));
                    assert!(c.is_codeword(out.codeword.as_ref().unwrap()).unwrap());
                    miscorrect += 1;
                }
                DecodeStatus::Clean => panic!("3 errors cannot give zero syndromes"),
            }
        }
        let rate = miscorrect as f64 / trials as f64;
        // Sphere-packing estimate: V(36,2)*... / 256^4 gives roughly 1%.
        assert!(rate > 0.001 && rate < 0.03, "miscorrection rate {rate}");
    }

    #[test]
    fn erasure_only_recovers_r_symbols_without_locator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = code(40, 24);
        for _ in 0..200 {
            let data = random_data(&mut rng, &c);
            let mut word = c.encode(&data).unwrap();
            let erased = sample(&mut rng, 40, c.r()).into_vec();
            corrupt(&mut rng, &mut word, &erased, 256);
            let out = c.decode_erasures(&word, &erased).unwrap();
            assert_eq!(out.status, DecodeStatus::Corrected(c.r()));
            assert_eq!(out.payload.as_deref(), Some(&data[..]));
            assert_eq!(out.work.locate, 0);
            assert_eq!(out.work.key_equation, 0);
        }
    }

    #[test]
    fn erasure_budget_and_clean_cases() {
        let c = code(36, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = random_data(&mut rng, &c);
        let word = c.encode(&data).unwrap();
        let out = c.decode_erasures(&word, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(out.status, DecodeStatus::Failure(FailureReason::ErasureBudget));
        let out = c.decode_erasures(&word, &[]).unwrap();
        assert_eq!(out.status, DecodeStatus::Clean);
        assert_eq!(out.payload.as_deref(), Some(&data[..]));
        assert!(matches!(
            c.decode_erasures(&word, &[36]),
            Err(CodeError::PositionOutOfRange { position: 36, n: 36 })
        ));
    }

    #[test]
    fn inconsistent_non_erased_symbols_are_detected() {
        let c = code(40, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut detected = 0;
        for _ in 0..200 {
            let data = random_data(&mut rng, &c);
            let mut word = c.encode(&data).unwrap();
            // 8 erasures leave 8 spare checks; one silent error must trip them.
            let erased: Vec<usize> = (0..8).collect();
            word[30] ^= rng.gen_range(1..256) as Symbol;
            let out = c.decode_erasures(&word, &erased).unwrap();
            if out.status == DecodeStatus::Failure(FailureReason::Verification) {
                detected += 1;
            }
        }
        assert_eq!(detected, 200);
    }

    #[test]
    fn joint_error_erasure_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = code(48, 32);
        for _ in 0..500 {
            let data = random_data(&mut rng, &c);
            let clean = c.encode(&data).unwrap();
            let e = rng.gen_range(0..=c.r());
            let t = (c.r() - e) / 2;
            let t = if t == 0 { 0 } else { rng.gen_range(0..=t) };
            let positions = sample(&mut rng, 48, e + t).into_vec();
            let (erased, errors) = positions.split_at(e);
            let mut word = clean.clone();
            corrupt(&mut rng, &mut word, errors, 256);
            for &p in erased {
                word[p] = rng.gen_range(0..256);
            }
            let out = c.decode(&word, erased).unwrap();
            assert!(!out.is_failure(), "e={e} t={t}");
            assert_eq!(out.payload.as_deref(), Some(&data[..]));
        }
    }

    #[test]
    fn syndromes_are_linear() {
        let c = code(36, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let word = c.encode(&random_data(&mut rng, &c)).unwrap();
            let noise: Vec<Symbol> = (0..36).map(|_| rng.gen_range(0..256)).collect();
            let sum: Vec<Symbol> = word.iter().zip(&noise).map(|(a, b)| a ^ b).collect();
            assert_eq!(c.syndromes(&sum).unwrap(), c.syndromes(&noise).unwrap());
        }
    }

    #[test]
    fn custom_evaluation_points() {
        let f = Field::gf256();
        let points: Vec<Symbol> = (0..20).map(|j| f.exp(3 * j + 1)).collect();
        let c = RsCode::new(CodeSpec::with_eval_points(f, 20, 14, points).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = random_data(&mut rng, &c);
        let mut word = c.encode(&data).unwrap();
        word[2] ^= 9;
        word[15] ^= 0x40;
        word[19] ^= 1;
        let out = c.decode_errors(&word).unwrap();
        assert_eq!(out.payload.as_deref(), Some(&data[..]));
    }

    #[test]
    fn rejects_bad_parameters() {
        let f = Field::gf256();
        assert!(CodeSpec::new(f.clone(), 256, 200).is_err());
        assert!(CodeSpec::new(f.clone(), 10, 10).is_err());
        assert!(CodeSpec::with_eval_points(f.clone(), 3, 1, vec![1, 2, 2]).is_err());
        let c = code(36, 32);
        assert!(matches!(c.encode(&[0; 31]), Err(CodeError::LengthMismatch { .. })));
        assert!(matches!(
            c.syndromes(&[0x100; 36]),
            Err(CodeError::SymbolOutOfRange { .. })
        ));
    }

    #[test]
    fn gf65536_long_code_round_trip() {
        let f = Field::gf65536();
        let c = RsCode::new(CodeSpec::new(f, 1088, 1024).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<Symbol> = (0..1024).map(|_| rng.gen()).collect();
        let mut word = c.encode(&data).unwrap();
        let erased: Vec<usize> = (160..224).collect();
        for &p in &erased {
            word[p] = rng.gen();
        }
        let out = c.decode_erasures(&word, &erased).unwrap();
        assert_eq!(out.payload.as_deref(), Some(&data[..]));
        assert_eq!(out.work.locate, 0);
        let mut word = c.encode(&data).unwrap();
        for p in [3usize, 400, 1000, 1087] {
            word[p] ^= 0x1234;
        }
        let out = c.decode_errors(&word).unwrap();
        assert_eq!(out.status, DecodeStatus::Corrected(4));
        assert_eq!(out.payload.as_deref(), Some(&data[..]));
    }
}
