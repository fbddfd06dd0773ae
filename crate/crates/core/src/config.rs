//! Run configuration: one TOML file, optionally patched by `path=value`
//! overrides, validated before anything runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::analytic::RiskModel;
use crate::outer::SpanLayout;
use crate::sim::SimConfig;
use crate::workload::WorkloadSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Ber,
    RandomRatio,
    WriteRatio,
    /// Span size in bytes at a fixed 8/9 outer rate.
    Span,
    Gamma,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Ber => "ber",
            SweepAxis::RandomRatio => "random_ratio",
            SweepAxis::WriteRatio => "write_ratio",
            SweepAxis::Span => "span",
            SweepAxis::Gamma => "gamma",
        }
    }

    /// Unit label used in CSV headers.
    pub fn unit(&self) -> &'static str {
        match self {
            SweepAxis::Ber => "per_bit",
            SweepAxis::Span => "bytes",
            _ => "fraction",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Value::String(s.to_string())
            .try_into()
            .map_err(|_| ConfigError::Invalid(format!("unknown sweep axis `{s}` (ber, random_ratio, write_ratio, span, gamma)")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    pub bers: Vec<f64>,
    pub risk_model: RiskModel,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            bers: vec![0.0, 1e-6, 1e-5, 1e-4, 1e-3],
            risk_model: RiskModel::DataChunks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output: Option<PathBuf>,
    /// Independent replicates per grid point, merged into one row.
    pub trials: u32,
    pub threads: Option<usize>,
    pub sim: SimConfig,
    pub workload: WorkloadSpec,
    pub analyze: AnalyzeConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output: None,
            trials: 1,
            threads: None,
            sim: SimConfig::default(),
            workload: WorkloadSpec::default(),
            analyze: AnalyzeConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Set `a.b.c = value` inside a TOML table, creating tables on the way.
/// The value is parsed as a TOML literal, falling back to a bare string.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let bad = |m: &str| ConfigError::Override(spec.to_string(), m.to_string());
    let (path, raw) = spec.split_once('=').ok_or_else(|| bad("expected path=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad("empty key"));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().unwrap();
    let mut table = root;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| bad(&format!("`{k}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        self.sim.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.workload.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.trials == 0 {
            return inv("trials must be at least 1".into());
        }
        if self.threads == Some(0) {
            return inv("threads must be at least 1".into());
        }
        for &b in &self.analyze.bers {
            if !(0.0..=1.0).contains(&b) {
                return inv(format!("analyze.bers entry {b} outside [0, 1]"));
            }
        }
        if let Some(axis) = self.sweep.axis {
            for &v in &self.sweep.values {
                self.check_axis_value(axis, v)?;
            }
        }
        Ok(())
    }

    pub fn check_axis_value(&self, axis: SweepAxis, v: f64) -> Result<(), ConfigError> {
        let ok = match axis {
            SweepAxis::Ber | SweepAxis::RandomRatio | SweepAxis::WriteRatio | SweepAxis::Gamma => {
                (0.0..=1.0).contains(&v)
            }
            SweepAxis::Span => v.fract() == 0.0 && v > 0.0 && SpanLayout::at_rate_8_9(v as usize).is_ok(),
        };
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Invalid(format!("sweep value {v} is not valid for axis {}", axis.name())))
        }
    }
}
