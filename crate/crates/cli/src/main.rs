use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use hbm_ecc::config::{RunConfig, SweepAxis};
use hbm_ecc::container::{decode_container, encode_container, ContainerError};
use hbm_ecc::selftest::{run_selftest, SelftestOptions};
use hbm_ecc::sim::simulate;
use hbm_ecc::sweep::{analyze, run_workload, sweep, write_csv, RunError};
use hbm_ecc::workload::parse_trace;

#[derive(Parser)]
#[command(name = "hbm-ecc", version, about = "Two-level RS protection for 32-byte memory interfaces")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "HBM_ECC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set sim.fault.ber=1e-4`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Write results here instead of stdout (overrides `output`).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-form reliability report (JSON) for each configured BER.
    Analyze {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// BER values, replacing `analyze.bers`.
        #[arg(long, value_delimiter = ',')]
        ber: Vec<f64>,
    },
    /// One-axis sweep, one CSV row per value.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// ber, random_ratio, write_ratio, span or gamma (else `sweep.axis`).
        #[arg(long)]
        axis: Option<String>,
        /// Grid values, replacing `sweep.values`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Replay a trace file (or the configured synthetic workload); JSON summary.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// CSV trace of `op,address,length` lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Wrap a file in the two-level code using `sim.layout`.
    Encode {
        #[command(flatten)]
        cfg: ConfigArgs,
        input: PathBuf,
    },
    /// Decode a container, optionally injecting bit errors first.
    Decode {
        #[command(flatten)]
        cfg: ConfigArgs,
        input: PathBuf,
        /// Flip bits of the wire image at this rate before decoding.
        #[arg(long)]
        inject_ber: Option<f64>,
        #[arg(long, default_value_t = 0x5EED)]
        seed: u64,
    },
    /// Run the invariant suite.
    Selftest {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0x5E1F)]
        seed: u64,
        /// Print a JSON report instead of text.
        #[arg(long)]
        json: bool,
        #[arg(long, hide = true)]
        corrupt_field: bool,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    /// Exit 1: an invariant, decode or check failed.
    Check(anyhow::Error),
    /// Exit 2: bad configuration or input.
    Config(anyhow::Error),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(_) | RunError::Trace(_) | RunError::Analytic(_) => Failure::Config(e.into()),
            RunError::Sim(hbm_ecc::sim::SimError::Malformed { .. } | hbm_ecc::sim::SimError::Config(_)) => {
                Failure::Config(e.into())
            }
            _ => Failure::Check(e.into()),
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn load(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(args.config.as_deref(), &args.overrides).map_err(config_err)?;
    if args.output.is_some() {
        cfg.output = args.output.clone();
    }
    Ok(cfg)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())).map_err(Failure::Check),
        None => io::stdout().write_all(bytes).map_err(|e| Failure::Check(e.into())),
    }
}

fn json(v: &impl serde::Serialize) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("results serialize");
    s.push(b'\n');
    s
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Analyze { cfg, ber } => {
            let mut c = load(&cfg)?;
            if !ber.is_empty() {
                c.analyze.bers = ber;
                c.validate().map_err(config_err)?;
            }
            emit(c.output.as_deref(), &json(&analyze(&c)?))
        }
        Cmd::Sweep { cfg, axis, values } => {
            let c = load(&cfg)?;
            let axis = match axis {
                Some(a) => a.parse::<SweepAxis>().map_err(config_err)?,
                None => c.sweep.axis.ok_or_else(|| config_err(anyhow!("no sweep axis given (--axis or sweep.axis)")))?,
            };
            let values = if values.is_empty() { c.sweep.values.clone() } else { values };
            if values.is_empty() {
                return Err(config_err(anyhow!("no sweep values given (--values or sweep.values)")));
            }
            for &v in &values {
                c.check_axis_value(axis, v).map_err(config_err)?;
            }
            let rows = sweep(&c, axis, &values)?;
            let mut buf = Vec::new();
            write_csv(&mut buf, axis, &rows)?;
            emit(c.output.as_deref(), &buf)
        }
        Cmd::Simulate { cfg, trace } => {
            let c = load(&cfg)?;
            let metrics = match trace {
                Some(path) => {
                    let t = parse_trace(&path, Some(c.workload.address_space_bytes))
                        .with_context(|| format!("trace {}", path.display()))
                        .map_err(Failure::Config)?;
                    simulate(t, &c.sim).map_err(RunError::from)?
                }
                None => run_workload(&c)?,
            };
            emit(c.output.as_deref(), &json(&metrics.summary(&c.sim)))
        }
        Cmd::Encode { cfg, input } => {
            let c = load(&cfg)?;
            let data = fs::read(&input).with_context(|| format!("reading {}", input.display())).map_err(Failure::Config)?;
            let out = encode_container(&data, &c.sim.layout).map_err(|e| Failure::Check(e.into()))?;
            emit(c.output.as_deref(), &out)
        }
        Cmd::Decode { cfg, input, inject_ber, seed } => {
            let c = load(&cfg)?;
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display())).map_err(Failure::Config)?;
            let noise = match inject_ber {
                Some(ber) => {
                    let f = hbm_ecc::fault::FaultConfig { ber, burst: None, seed };
                    f.validate().map_err(config_err)?;
                    Some(f)
                }
                None => None,
            };
            let (data, stats) = decode_container(&bytes, noise.as_ref()).map_err(|e| match e {
                ContainerError::Uncorrectable { .. } => Failure::Check(e.into()),
                _ => Failure::Config(e.into()),
            })?;
            eprintln!("{}", serde_json::to_string(&stats).expect("stats serialize"));
            emit(c.output.as_deref(), &data)
        }
        Cmd::Selftest { trials, seed, json: as_json, corrupt_field } => {
            let report = run_selftest(&SelftestOptions { seed, trials, corrupt_field });
            if as_json {
                emit(None, &json(&report))?;
            } else {
                for c in &report.checks {
                    println!("{} {:<15} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Check(anyhow!("selftest failed: {}", report.failed_names().join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: invalid thread count {n}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
