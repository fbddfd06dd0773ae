//! Experiment drivers on top of a [`RunConfig`]: closed-form reports,
//! workload replays and one-axis sweeps with a fixed CSV schema.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::analytic::{max_qualified_ber, reliability_report, AnalyticError, ReliabilityReport};
use crate::config::{ConfigError, RunConfig, SweepAxis};
use crate::fault::derive_seed;
use crate::outer::SpanLayout;
use crate::sim::{simulate, SimError, SimMetrics, SimSummary};
use crate::workload::TraceError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

/// One report per configured BER, for the configured layout.
pub fn analyze(cfg: &RunConfig) -> Result<Vec<ReliabilityReport>, RunError> {
    cfg.analyze
        .bers
        .iter()
        .map(|&ber| {
            Ok(reliability_report(
                ber,
                &cfg.sim.layout,
                cfg.analyze.risk_model,
                cfg.sim.bytes_per_token,
                cfg.sim.failure_target,
            )?)
        })
        .collect()
}

/// Replay the configured synthetic workload `trials` times with derived
/// seeds; replicate 0 uses the configured seeds unchanged.
pub fn run_workload(cfg: &RunConfig) -> Result<SimMetrics, RunError> {
    let mut total = SimMetrics::default();
    for t in 0..cfg.trials as u64 {
        let mut sim = cfg.sim.clone();
        let mut wl = cfg.workload.clone();
        if t > 0 {
            sim.fault.seed = derive_seed(sim.fault.seed, &[t]);
            wl.seed = derive_seed(wl.seed, &[t]);
        }
        total.merge(&simulate(wl.iter()?, &sim)?);
    }
    Ok(total)
}

/// Config for one grid point of a sweep.
pub fn point_config(cfg: &RunConfig, axis: SweepAxis, v: f64) -> Result<RunConfig, RunError> {
    cfg.check_axis_value(axis, v)?;
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Ber => c.sim.fault.ber = v,
        SweepAxis::RandomRatio => c.workload.random_ratio = v,
        SweepAxis::WriteRatio => c.workload.read_ratio = 1.0 - v,
        SweepAxis::Span => {
            let w = v as usize;
            c.sim.layout = SpanLayout::at_rate_8_9(w).map_err(SimError::from)?;
            // Streaming requests cover exactly one span.
            c.workload.seq_run_bytes = w as u64;
            c.sim.rr_window = c.sim.rr_window.map(|m| m.min(c.sim.layout.n));
        }
        SweepAxis::Gamma => c.sim.gamma = v,
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub sim: SimSummary,
    /// Closed-form per-codeword failure at the point's BER and layout.
    pub p_cw_fail_analytic: f64,
    pub p_token_fail_analytic: f64,
    pub qualified: bool,
    pub max_qualified_ber: Option<f64>,
}

pub fn sweep_point(cfg: &RunConfig, axis: SweepAxis, v: f64) -> Result<SweepRow, RunError> {
    let c = point_config(cfg, axis, v)?;
    let metrics = run_workload(&c)?;
    let risk = c.analyze.risk_model;
    let rep = reliability_report(c.sim.fault.ber, &c.sim.layout, risk, c.sim.bytes_per_token, c.sim.failure_target)?;
    Ok(SweepRow {
        axis,
        value: v,
        sim: metrics.summary(&c.sim),
        p_cw_fail_analytic: rep.p_cw_fail_exact,
        p_token_fail_analytic: rep.p_token_fail,
        qualified: rep.qualified,
        max_qualified_ber: max_qualified_ber(&c.sim.layout, risk, c.sim.bytes_per_token, c.sim.failure_target)?,
    })
}

/// Grid points run in parallel; rows come back in axis order.
pub fn sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>, RunError> {
    values.par_iter().map(|&v| sweep_point(cfg, axis, v)).collect()
}

pub const CSV_COLUMNS: [&str; 19] = [
    "eta_eff[ratio]",
    "useful_bytes[bytes]",
    "bus_bytes[bytes]",
    "penalty_bytes[bytes]",
    "accesses[count]",
    "escalations[count]",
    "escalation_rate[per_access]",
    "replays[count]",
    "uncorrectable[count]",
    "p_cw_fail_mc[prob]",
    "p_cw_fail[prob]",
    "p_token_fail[prob]",
    "qualified[bool]",
    "max_qualified_ber[per_bit]",
    "silent_corruptions[count]",
    "latency_p50[ns]",
    "latency_p90[ns]",
    "latency_p99[ns]",
    "latency_p999[ns]",
];

/// CSV with units in every numeric header. The first column is the axis
/// value, named `<axis>[<unit>]`. An unqualifiable span leaves
/// `max_qualified_ber` empty.
pub fn write_csv<W: Write>(out: W, axis: SweepAxis, rows: &[SweepRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![format!("{}[{}]", axis.name(), axis.unit())];
    header.extend(CSV_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let s = &r.sim;
        let rec = vec![
            r.value.to_string(),
            s.eta_eff.to_string(),
            s.useful_bytes.to_string(),
            s.bus_bytes.to_string(),
            s.penalty_bytes.to_string(),
            s.accesses.to_string(),
            s.escalations.to_string(),
            s.escalation_rate.to_string(),
            s.replays.to_string(),
            s.uncorrectable_events.to_string(),
            s.p_cw_fail.to_string(),
            r.p_cw_fail_analytic.to_string(),
            r.p_token_fail_analytic.to_string(),
            r.qualified.to_string(),
            r.max_qualified_ber.map(|b| b.to_string()).unwrap_or_default(),
            s.silent_corruptions.to_string(),
            s.latency_p50_ns.to_string(),
            s.latency_p90_ns.to_string(),
            s.latency_p99_ns.to_string(),
            s.latency_p999_ns.to_string(),
        ];
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
