//! Closed-form reliability, escalation, qualification, cost and sizing.
//!
//! Tail probabilities are evaluated in log space: each binomial or Poisson
//! term is formed as a logarithm, and the terms are accumulated smallest
//! first relative to the largest one. Nothing is ever computed as
//! `1 - (sum of the head)`, which would cancel to zero long before the
//! 1e-18 regime.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::byte_error_prob;
use crate::inner::{CORRECTABLE_BYTES, PAYLOAD_BYTES, WIRE_BYTES};
use crate::outer::SpanLayout;
use crate::rs::StageWork;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("access mix weights sum to {0}, expected 1")]
    MixWeights(f64),
    #[error("window {m} chunks exceeds span of {n} chunks")]
    Window { m: usize, n: usize },
    #[error("yield curve: {0}")]
    Curve(&'static str),
    #[error("theta {0} outside the yield curve domain")]
    OutsideDomain(f64),
    #[error("yield is zero at theta {0}; cost per GB is undefined")]
    UndefinedCost(f64),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("budget violated: 2*{t} + {e} > {r}")]
    Budget { t: usize, e: usize, r: usize },
    #[error("erasure-only decoding cannot handle unknown errors (t={0})")]
    ErrorsWithoutLocator(usize),
}

fn check_prob(p: f64) -> Result<(), AnalyticError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(AnalyticError::Probability(p))
    }
}

pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

/// Sum `exp(l)` over log terms, smallest first.
fn sum_log_terms(mut logs: Vec<f64>) -> f64 {
    logs.retain(|l| l.is_finite());
    if logs.is_empty() {
        return 0.0;
    }
    logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = *logs.last().unwrap();
    let scaled: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    (max + scaled.ln()).exp()
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`.
pub fn binomial_upper_tail(n: u64, p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let logs = (k..=n)
        .map(|j| ln_choose(n, j) + j as f64 * lp + (n - j) as f64 * lq)
        .collect();
    sum_log_terms(logs).min(1.0)
}

/// `P(Y >= k)` for `Y ~ Poisson(mu)`.
pub fn poisson_upper_tail(mu: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if mu <= 0.0 {
        return 0.0;
    }
    let lm = mu.ln();
    let mut logs = Vec::new();
    let mut j = k;
    let mut lf = ln_factorial(k);
    loop {
        let l = j as f64 * lm - lf - mu;
        logs.push(l);
        // Past the mode the terms shrink geometrically; stop once negligible.
        if j as f64 > mu && l < logs[0] - 45.0 {
            break;
        }
        if j > k + 100_000 {
            break;
        }
        j += 1;
        lf += (j as f64).ln();
    }
    sum_log_terms(logs).min(1.0)
}

/// Per-chunk rejection: `(q, P(X >= 3))` with `X ~ Binomial(36, q)`.
pub fn chunk_reject_prob(ber: f64) -> Result<(f64, f64), AnalyticError> {
    check_prob(ber)?;
    let q = byte_error_prob(ber);
    let p_rej = binomial_upper_tail(WIRE_BYTES as u64, q, CORRECTABLE_BYTES as u64 + 1);
    Ok((q, p_rej))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodewordFailure {
    pub mu: f64,
    /// `P(Binomial(N, p_rej) > C)`.
    pub exact: f64,
    /// `P(Poisson(mu) > C)`.
    pub poisson_tail: f64,
    /// `mu^(C+1) / (C+1)!`, which dominates both tails.
    pub poisson_bound: f64,
}

pub fn codeword_fail(n: usize, c: usize, p_rej: f64) -> Result<CodewordFailure, AnalyticError> {
    check_prob(p_rej)?;
    let mu = n as f64 * p_rej;
    let k = c as u64 + 1;
    let poisson_bound = if mu > 0.0 {
        (k as f64 * mu.ln() - ln_factorial(k)).exp()
    } else {
        0.0
    };
    Ok(CodewordFailure {
        mu,
        exact: binomial_upper_tail(n as u64, p_rej, k),
        poisson_tail: poisson_upper_tail(mu, k),
        poisson_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Qualification {
    pub qualified: bool,
    pub p_token_fail: f64,
    pub codewords_per_token: u64,
}

/// Per-token failure over `ceil(bytes_per_token / W)` independent codewords.
pub fn qualify(
    p_cw_fail: f64,
    bytes_per_token: u64,
    layout: &SpanLayout,
    target: f64,
) -> Result<Qualification, AnalyticError> {
    check_prob(p_cw_fail)?;
    if bytes_per_token == 0 {
        return Err(AnalyticError::NotPositive("bytes_per_token"));
    }
    let n = bytes_per_token.div_ceil(layout.w as u64);
    let p_token_fail = if p_cw_fail >= 1.0 {
        1.0
    } else {
        -(n as f64 * (-p_cw_fail).ln_1p()).exp_m1()
    };
    Ok(Qualification {
        qualified: p_token_fail <= target,
        p_token_fail,
        codewords_per_token: n,
    })
}

/// Everything closed-form about one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub ber: f64,
    pub q: f64,
    pub p_rej: f64,
    /// Chunks whose rejection counts against the erasure budget.
    pub chunks_at_risk: usize,
    pub capacity: usize,
    pub mu: f64,
    pub p_cw_fail_exact: f64,
    pub p_cw_fail_poisson_tail: f64,
    pub p_cw_fail_poisson_bound: f64,
    pub bytes_per_token: u64,
    pub codewords_per_token: u64,
    pub p_token_fail: f64,
    pub failure_target: f64,
    pub qualified: bool,
}

/// Which chunks of a span can consume the erasure budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskModel {
    /// The `N` data chunks only.
    #[default]
    DataChunks,
    /// Data plus inner-coded parity chunks.
    AllChunks,
}

impl RiskModel {
    pub fn chunks(&self, layout: &SpanLayout) -> usize {
        match self {
            RiskModel::DataChunks => layout.n,
            RiskModel::AllChunks => layout.total_chunks(),
        }
    }
}

pub fn reliability_report(
    ber: f64,
    layout: &SpanLayout,
    risk: RiskModel,
    bytes_per_token: u64,
    failure_target: f64,
) -> Result<ReliabilityReport, AnalyticError> {
    let (q, p_rej) = chunk_reject_prob(ber)?;
    let chunks = risk.chunks(layout);
    let cw = codeword_fail(chunks, layout.c, p_rej)?;
    let qual = qualify(cw.exact, bytes_per_token, layout, failure_target)?;
    Ok(ReliabilityReport {
        ber,
        q,
        p_rej,
        chunks_at_risk: chunks,
        capacity: layout.c,
        mu: cw.mu,
        p_cw_fail_exact: cw.exact,
        p_cw_fail_poisson_tail: cw.poisson_tail,
        p_cw_fail_poisson_bound: cw.poisson_bound,
        bytes_per_token,
        codewords_per_token: qual.codewords_per_token,
        p_token_fail: qual.p_token_fail,
        failure_target,
        qualified: qual.qualified,
    })
}

/// Largest BER at which the layout still qualifies, by bisection on
/// `log10(ber)` over `[1e-12, 0.5]`. `None` if even 1e-12 fails.
pub fn max_qualified_ber(
    layout: &SpanLayout,
    risk: RiskModel,
    bytes_per_token: u64,
    failure_target: f64,
) -> Result<Option<f64>, AnalyticError> {
    let ok = |lb: f64| -> Result<bool, AnalyticError> {
        Ok(reliability_report(10f64.powf(lb), layout, risk, bytes_per_token, failure_target)?.qualified)
    };
    let (mut lo, mut hi) = (-12.0f64, 0.5f64.log10());
    if !ok(lo)? {
        return Ok(None);
    }
    if ok(hi)? {
        return Ok(Some(10f64.powf(hi)));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(10f64.powf(lo)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessMix {
    pub sequential_read: f64,
    pub random_read: f64,
    pub random_write: f64,
    #[serde(default)]
    pub sequential_write: f64,
    /// Chunks a random read is assumed to touch.
    pub window: usize,
    /// Parity chunks a random write reads.
    pub parity_chunks: usize,
}

impl AccessMix {
    /// The inference mix used for the escalation estimate.
    pub fn inference(layout: &SpanLayout) -> Self {
        AccessMix {
            sequential_read: 0.90,
            random_read: 0.05,
            random_write: 0.05,
            sequential_write: 0.0,
            window: 32,
            parity_chunks: layout.parity_chunks(),
        }
    }

    pub fn validate(&self, layout: &SpanLayout) -> Result<(), AnalyticError> {
        let w = [self.sequential_read, self.random_read, self.random_write, self.sequential_write];
        for &x in &w {
            check_prob(x)?;
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AnalyticError::MixWeights(sum));
        }
        if self.window > layout.n {
            return Err(AnalyticError::Window {
                m: self.window,
                n: layout.n,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscalationMix {
    pub sequential_read: f64,
    pub random_read: f64,
    pub random_write: f64,
    /// Full-span writes encode without reading, so never escalate.
    pub sequential_write: f64,
    pub p_outer: f64,
}

/// `1 - (1 - p)^chunks`.
pub fn any_of(p: f64, chunks: usize) -> f64 {
    if p >= 1.0 {
        return if chunks > 0 { 1.0 } else { 0.0 };
    }
    -(chunks as f64 * (-p).ln_1p()).exp_m1()
}

pub fn escalation_mix(p_rej: f64, mix: &AccessMix, layout: &SpanLayout) -> Result<EscalationMix, AnalyticError> {
    check_prob(p_rej)?;
    mix.validate(layout)?;
    let sr = any_of(p_rej, layout.n);
    let rr = any_of(p_rej, mix.window);
    let rw = any_of(p_rej, mix.window + mix.parity_chunks);
    Ok(EscalationMix {
        sequential_read: sr,
        random_read: rr,
        random_write: rw,
        sequential_write: 0.0,
        p_outer: mix.sequential_read * sr + mix.random_read * rr + mix.random_write * rw,
    })
}

/// Sampled monotone yield curve plus the wafer economics around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YieldCurve {
    /// `(theta, p(theta))`, theta strictly increasing.
    pub points: Vec<(f64, f64)>,
    pub wafer_cost: f64,
    pub dies_per_wafer: f64,
    pub capacity_per_die_gb: f64,
}

impl YieldCurve {
    pub fn validate(&self) -> Result<(), AnalyticError> {
        if self.points.is_empty() {
            return Err(AnalyticError::Curve("no sample points"));
        }
        for w in self.points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(AnalyticError::Curve("theta must be strictly increasing"));
            }
            if w[1].1 < w[0].1 {
                return Err(AnalyticError::Curve("yield must be non-decreasing"));
            }
        }
        for &(_, p) in &self.points {
            check_prob(p)?;
        }
        for (name, v) in [
            ("wafer_cost", self.wafer_cost),
            ("dies_per_wafer", self.dies_per_wafer),
            ("capacity_per_die_gb", self.capacity_per_die_gb),
        ] {
            if !(v > 0.0) {
                return Err(AnalyticError::NotPositive(name));
            }
        }
        Ok(())
    }

    /// Linear interpolation between samples.
    pub fn yield_at(&self, theta: f64) -> Result<f64, AnalyticError> {
        self.validate()?;
        let (first, last) = (self.points[0], *self.points.last().unwrap());
        if theta < first.0 || theta > last.0 {
            return Err(AnalyticError::OutsideDomain(theta));
        }
        let i = self.points.partition_point(|&(t, _)| t <= theta);
        if i == self.points.len() {
            return Ok(last.1);
        }
        let (a, b) = (self.points[i - 1], self.points[i]);
        Ok(a.1 + (b.1 - a.1) * (theta - a.0) / (b.0 - a.0))
    }
}

/// `C(theta) = C_wafer / (N_dies * p(theta) * capacity_per_die)`.
pub fn cost_per_gb(theta: f64, curve: &YieldCurve) -> Result<f64, AnalyticError> {
    let p = curve.yield_at(theta)?;
    if p <= 0.0 {
        return Err(AnalyticError::UndefinedCost(theta));
    }
    Ok(curve.wafer_cost / (curve.dies_per_wafer * p * curve.capacity_per_die_gb))
}

/// Outer repair pipes needed so the cluster runs at `target_util`.
pub fn provision_outer_pipes(
    bandwidth_bytes_per_s: f64,
    request_bytes: f64,
    p_outer: f64,
    repair_cycles: f64,
    freq_hz: f64,
    target_util: f64,
) -> Result<u64, AnalyticError> {
    check_prob(p_outer)?;
    for (name, v) in [
        ("bandwidth", bandwidth_bytes_per_s),
        ("request_bytes", request_bytes),
        ("repair_cycles", repair_cycles),
        ("freq", freq_hz),
    ] {
        if !(v > 0.0) {
            return Err(AnalyticError::NotPositive(name));
        }
    }
    if !(target_util > 0.0 && target_util <= 1.0) {
        return Err(AnalyticError::NotPositive("target_util in (0, 1]"));
    }
    let busy = bandwidth_bytes_per_s / request_bytes * p_outer * repair_cycles;
    // Guard against 23.0000000001-style rounding pushing an exact fit up.
    let pipes = busy / (freq_hz * target_util);
    Ok((pipes * (1.0 - 1e-12)).ceil() as u64)
}

/// Stage operation counts of the textbook decoder cost model.
pub fn decode_work(n: usize, r: usize, t: usize, e: usize, erasure_only: bool) -> Result<StageWork, AnalyticError> {
    if 2 * t + e > r {
        return Err(AnalyticError::Budget { t, e, r });
    }
    if erasure_only && t > 0 {
        return Err(AnalyticError::ErrorsWithoutLocator(t));
    }
    Ok(StageWork {
        syndrome: (n * r) as u64,
        key_equation: (r * r) as u64,
        locate: if erasure_only { 0 } else { (n * t) as u64 },
        correct: (t + e) as u64,
    })
}

/// Bytes moved by a naive single-chunk update: the whole span and parity.
pub fn t_naive(layout: &SpanLayout) -> u64 {
    (layout.w + layout.p) as u64
}

pub fn amp_naive(layout: &SpanLayout) -> f64 {
    t_naive(layout) as f64 / PAYLOAD_BYTES as f64
}

/// Fast-path write traffic `72q + P`.
pub fn t_fast(q: usize, layout: &SpanLayout) -> u64 {
    (2 * WIRE_BYTES * q + layout.p) as u64
}

pub fn amp_fast(q: usize, layout: &SpanLayout) -> f64 {
    t_fast(q, layout) as f64 / (PAYLOAD_BYTES * q) as f64
}

/// Upper bound on the escalated write's repair traffic.
pub fn t_repair_bound(layout: &SpanLayout) -> u64 {
    t_naive(layout)
}
