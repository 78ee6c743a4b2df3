//! JSON experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shearmix::flow::Profile;
use shearmix::harris::LyapunovParams;
use shearmix::spectral::MixingOptions;

/// Raised for anything the user can fix in the configuration or flags.
/// The binary maps it to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    EdVerify,
    MixingSweep,
    DriftCert,
    UlamGap,
    Exponent,
    Correlations,
    SmoothingScaling,
}

impl Experiment {
    /// Experiments that sweep strictly positive diffusivities.
    fn needs_kappa(self) -> bool {
        !matches!(self, Experiment::Exponent | Experiment::DriftCert | Experiment::UlamGap)
    }
}

/// Initial scalar for field-based runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialData {
    /// `1 + cos(2π x1)`.
    SingleMode,
    /// Periodized Gaussian of the given width (0 → grid-dependent surrogate
    /// width) centered at a seed-dependent point.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Samples {
    /// Shift samples per drift-certificate cell.
    pub shift_samples: usize,
    pub ulam_bins: usize,
    pub samples_per_bin: usize,
    pub contraction_pairs: usize,
    pub difference_samples: usize,
    pub n_particles: usize,
    pub n_realizations: usize,
    pub n_refresh: usize,
    pub lyapunov_steps: usize,
    pub lyapunov_samples: usize,
}

impl Default for Samples {
    fn default() -> Self {
        Samples {
            shift_samples: 10_000,
            ulam_bins: 32,
            samples_per_bin: 10_000,
            contraction_pairs: 200,
            difference_samples: 1_000_000,
            n_particles: 10_000,
            n_realizations: 50,
            n_refresh: 10,
            lyapunov_steps: 1000,
            lyapunov_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftOptions {
    pub params: LyapunovParams,
    /// Amplitudes tried in order; the first passing one is A*.
    pub candidates: Vec<f64>,
    pub negative_control: f64,
    pub n_radii: usize,
    pub n_directions: usize,
    pub n_outer_radii: usize,
    /// Periods for the multi-step fallback when no single step passes.
    pub multi_steps: Option<usize>,
}

impl Default for DriftOptions {
    fn default() -> Self {
        DriftOptions {
            params: LyapunovParams::default(),
            candidates: vec![2.0, 5.0, 10.0, 20.0],
            negative_control: 0.1,
            n_radii: 8,
            n_directions: 16,
            n_outer_radii: 8,
            multi_steps: Some(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UlamOptions {
    pub beta_weight: f64,
    pub steps: usize,
    /// Diffusivities at which the difference-chain gate is run before the
    /// Ulam chains are built.
    pub gate_kappas: Vec<f64>,
}

impl Default for UlamOptions {
    fn default() -> Self {
        UlamOptions {
            beta_weight: 0.1,
            steps: 1,
            gate_kappas: vec![0.0, 1e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationOptions {
    pub modes: Vec<[i32; 2]>,
    pub n_max: usize,
    pub q_list: Vec<f64>,
    pub substeps: usize,
    /// Realizations (shift sequences) in the noise-refresh check.
    pub refresh_realizations: usize,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        CorrelationOptions {
            modes: vec![[1, 0], [0, 1], [1, 1]],
            n_max: 10,
            q_list: vec![0.0, 1.0, 2.0],
            substeps: shearmix::stochastic::DEFAULT_SUBSTEPS,
            refresh_realizations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldOptions {
    pub initial: InitialData,
    pub n_periods: usize,
    /// Sobolev order α for ed-verify and smoothing runs.
    pub alpha: f64,
    /// Mixing rate per period for ed-verify; fitted in-run when absent.
    pub gamma: Option<f64>,
    /// Exponents β for the exceedance frequencies of `D̂ ≥ κ^{-β}`.
    pub exceedance_betas: Vec<f64>,
    /// Initial widths for smoothing runs, as fractions of `√κ`.
    pub width_fractions: Vec<f64>,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions {
            initial: InitialData::Gaussian { sigma: 0.0 },
            n_periods: 40,
            alpha: 1.0,
            gamma: None,
            exceedance_betas: vec![0.1, 0.25, 0.5],
            width_fractions: vec![0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub kappa_list: Vec<f64>,
    /// Minimum grid size; runs upgrade it to satisfy the resolution rule.
    #[serde(default = "default_grid")]
    pub grid: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub samples: Samples,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub mixing: MixingOptions,
    #[serde(default)]
    pub drift: DriftOptions,
    #[serde(default)]
    pub ulam: UlamOptions,
    #[serde(default)]
    pub correlations: CorrelationOptions,
    #[serde(default)]
    pub field: FieldOptions,
}

fn default_amplitude() -> f64 {
    0.5
}

fn default_grid() -> usize {
    256
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Defaults used when a subcommand runs without `--config`.
    pub fn default_for(experiment: Experiment) -> Self {
        let (amplitude, kappa_list) = match experiment {
            Experiment::MixingSweep => (0.5, vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4]),
            Experiment::EdVerify => (0.5, vec![1e-2, 1e-3, 1e-4]),
            Experiment::SmoothingScaling => (0.5, vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4]),
            Experiment::Correlations => (2.0, vec![1e-3, 1e-4]),
            Experiment::UlamGap => (2.0, vec![1e-2, 1e-3, 1e-4]),
            Experiment::DriftCert => (2.0, vec![1e-3, 1e-4]),
            Experiment::Exponent => (20.0, vec![]),
            Experiment::Simulate => (0.5, vec![1e-3]),
        };
        ExperimentConfig {
            experiment,
            amplitude,
            profile: Profile::Sine,
            kappa_list,
            grid: default_grid(),
            seeds: if experiment == Experiment::EdVerify { (1..=5).collect() } else { vec![1] },
            samples: Samples::default(),
            output_dir: default_output_dir(),
            mixing: MixingOptions::default(),
            drift: DriftOptions::default(),
            ulam: UlamOptions::default(),
            correlations: CorrelationOptions::default(),
            field: FieldOptions::default(),
        }
    }

    /// Reads a config file, or the `config` member of a run manifest so
    /// that any manifest can be replayed.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{} is not valid JSON: {e}", path.display())))?;
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        serde_json::from_value(value).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds must be listed explicitly"));
        }
        if !self.amplitude.is_finite() {
            return Err(config_err("amplitude must be finite"));
        }
        if self.kappa_list.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(config_err("kappa_list entries must be strictly positive"));
        }
        if self.kappa_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(config_err("kappa_list must be sorted strictly descending"));
        }
        if self.experiment.needs_kappa() && self.kappa_list.is_empty() {
            return Err(config_err("kappa_list is empty"));
        }
        if self.grid < 8 {
            return Err(config_err("grid must be >= 8"));
        }
        if self.experiment == Experiment::SmoothingScaling && self.kappa_list.len() < 4 {
            return Err(config_err("smoothing fits need at least 4 diffusivities"));
        }
        if self.experiment == Experiment::DriftCert && self.drift.candidates.is_empty() {
            return Err(config_err("drift.candidates is empty"));
        }
        self.drift.params.validate().map_err(|e| config_err(e.to_string()))?;
        self.mixing.splitting.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }
}
