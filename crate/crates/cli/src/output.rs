//! Output tables and the run manifest.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub t: i64,
    pub y: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub t: i64,
    pub component: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogPredictiveRow {
    pub t: i64,
    pub log_predictive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqrRow {
    pub t: i64,
    pub lower_tau: f64,
    pub upper_tau: f64,
    pub lower: f64,
    pub upper: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub tau: f64,
    pub horizon: usize,
    pub t: i64,
    pub lp_mean: f64,
    pub lp_lower: f64,
    pub lp_upper: f64,
    pub y_mean: f64,
    pub y_lower: f64,
    pub y_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub tau: f64,
    pub window: usize,
    pub first_t: i64,
    pub last_t: i64,
    pub sum_mean: f64,
    pub sum_lower: f64,
    pub sum_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: i64,
    pub y: f64,
    pub x: Option<f64>,
    /// True linear predictor (or location) behind `y`.
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub shape: f64,
    pub skewness: f64,
    pub tau: f64,
    pub t_len: usize,
    pub scale: String,
    pub coverage: f64,
    pub rmae: f64,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

/// File-name fragment for a quantile level.
pub fn tau_label(tau: f64) -> String {
    format!("tau_{tau}")
}

/// Per-quantile fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub tau: f64,
    /// Sequential: MAP of `φ^{-1/2}`. MCMC: posterior mean of `φ^{-1/2}`.
    pub scale: f64,
    pub converged: Option<bool>,
    pub log_likelihood: Option<f64>,
    /// Steps where the mixing-weight shape guard fired.
    pub clamp_count: Option<usize>,
    pub scale_acceptance: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Option<RunConfig>,
    pub seed: u64,
    pub files: Vec<String>,
    pub fits: Vec<FitInfo>,
    pub notes: Vec<String>,
    pub summary: Option<serde_json::Value>,
    pub elapsed_seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, config: Option<RunConfig>, seed: u64) -> Self {
        Self {
            tool: "dqlm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seed,
            files: Vec::new(),
            fits: Vec::new(),
            notes: Vec::new(),
            summary: None,
            elapsed_seconds: 0.0,
        }
    }

    pub fn add_file(&mut self, dir: &Path, path: &Path) {
        let rel = path.strip_prefix(dir).unwrap_or(path);
        self.files.push(rel.display().to_string());
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}
