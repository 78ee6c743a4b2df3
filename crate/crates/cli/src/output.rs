//! Run directories, CSV/JSON writers, manifests and fit summaries.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use shearmix::stats::linear_fit;

use crate::config::ExperimentConfig;

/// Fits are never reported from fewer points than this.
pub const MIN_FIT_POINTS: usize = 4;

/// Least-squares line with the data it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
    pub slope_std_error: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl FitSummary {
    /// `None` with fewer than [`MIN_FIT_POINTS`] points or degenerate data.
    pub fn fit(x: &[f64], y: &[f64]) -> Option<Self> {
        if x.len() < MIN_FIT_POINTS {
            return None;
        }
        let f = linear_fit(x, y)?;
        Some(FitSummary {
            intercept: f.intercept,
            slope: f.slope,
            r2: f.r2,
            slope_std_error: f.slope_std_error,
            x: x.to_vec(),
            y: y.to_vec(),
            residuals: f.residuals,
        })
    }
}

/// Output directory of one run; remembers what it wrote.
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn note(&mut self, name: &str) {
        self.written.push(name.to_string());
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text).with_context(|| format!("writing {name}"))?;
        self.note(name);
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(self.path(name)).with_context(|| format!("writing {name}"))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.note(name);
        Ok(())
    }
}

/// CSV cell for an optional number; empty when absent.
pub fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Manifest {
            artifact: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            threads: rayon::current_num_threads(),
            wall_time_s: 0.0,
            warnings: Vec::new(),
            outputs: Vec::new(),
        }
    }
}
