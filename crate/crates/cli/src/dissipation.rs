//! Field-level runs: single simulations, the enhanced-dissipation prefactor
//! D̂ and the parabolic smoothing exponent.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shearmix::flow::{Axis, ShearSchedule};
use shearmix::harris::{correlation_decay, CorrelationConfig, ModePair};
use shearmix::spectral::{
    decay_run, resolved_grid, surrogate_sigma, write_field, FieldMeta, ScalarField, SpectralSolver,
};
use shearmix::stats::{mean_ci, Z95};
use shearmix::torus::{RngStream, TorusPoint};

use crate::config::{ConfigError, Experiment, ExperimentConfig, InitialData};
use crate::output::{cell, FitSummary, RunDir};

fn require(cfg: &ExperimentConfig, e: Experiment) -> anyhow::Result<()> {
    if cfg.experiment != e {
        return Err(ConfigError(format!("expected experiment {e:?}, got {:?}", cfg.experiment)).into());
    }
    cfg.validate()
}

fn seed_stream(seed: u64, label: &str) -> RngStream {
    RngStream::new(seed, 0).keyed(label, 0)
}

/// Initial data on an `n` grid for a given diffusivity and seed.
pub fn initial_field(init: InitialData, n: usize, kappa: f64, seed: u64) -> anyhow::Result<ScalarField> {
    Ok(match init {
        InitialData::SingleMode => ScalarField::from_fn(n, |x, _| 1.0 + (2.0 * PI * x).cos())?,
        InitialData::Gaussian { sigma } => {
            let sigma = if sigma > 0.0 { sigma } else { surrogate_sigma(n, kappa) };
            let center = TorusPoint::uniform(&mut seed_stream(seed, "center"));
            ScalarField::gaussian_bump(n, center, sigma)?
        }
    })
}

/// Norm series and final field for the first diffusivity and seed.
pub fn run_simulate(cfg: &ExperimentConfig, out: &mut RunDir) -> anyhow::Result<Vec<String>> {
    require(cfg, Experiment::Simulate)?;
    let kappa = cfg.kappa_list[0];
    let seed = cfg.seeds[0];
    let n = resolved_grid(cfg.grid, cfg.amplitude, kappa);
    let solver = SpectralSolver::new(n)?;
    let rho0 = initial_field(cfg.field.initial, n, kappa, seed)?;
    let schedule = ShearSchedule::new(cfg.amplitude, cfg.profile, seed_stream(seed, "shifts"));
    let orders = [-1.0, 1.0];
    let (run, last) = decay_run(
        &solver,
        &rho0,
        &schedule,
        kappa,
        cfg.field.n_periods.max(1),
        cfg.mixing.splitting,
        &orders,
    )?;
    let mut buf = Vec::new();
    run.series.write_csv(&mut buf)?;
    std::fs::write(out.path("norms.csv"), buf)?;
    out.note("norms.csv");
    let meta = FieldMeta {
        n,
        time: 2.0 * cfg.field.n_periods.max(1) as f64,
        kappa,
        seed,
    };
    write_field(&out.path("field.bin"), &last, &meta)?;
    out.note("field.bin");
    out.note("field.json");
    let mut warnings = Vec::new();
    if n > cfg.grid {
        warnings.push(format!("grid raised from {} to {n} by the resolution rule", cfg.grid));
    }
    Ok(warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdRow {
    pub seed: u64,
    pub kappa: f64,
    pub grid: usize,
    pub d_hat: Option<f64>,
    /// Period attaining the maximum.
    pub argmax: Option<usize>,
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdMoment {
    pub kappa: f64,
    pub q: f64,
    pub moment: f64,
    pub std_error: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdTrend {
    pub q: f64,
    /// Largest `|m_a − m_b| / √(se_a² + se_b²)` over κ pairs; `None` with
    /// fewer than two samples at some κ.
    pub max_z: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub kappa: f64,
    pub beta: f64,
    pub threshold: f64,
    pub frequency: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdReport {
    pub gamma: f64,
    pub gamma_source: String,
    pub alpha: f64,
    pub rows: Vec<EdRow>,
    pub moments: Vec<EdMoment>,
    pub trends: Vec<EdTrend>,
    pub exceedance: Vec<Exceedance>,
    pub warnings: Vec<String>,
}

/// `D̂ = max_n ‖ρ_n − ρ̄‖_∞ e^{γn} κ^{d/2+α} / ‖ρ₀ − ρ̄‖₁` with `d = 2`, for
/// `n = 0..=n_periods`.
#[allow(clippy::too_many_arguments)]
pub fn ed_prefactor(
    solver: &SpectralSolver,
    rho0: &ScalarField,
    schedule: &ShearSchedule,
    kappa: f64,
    gamma: f64,
    alpha: f64,
    n_periods: usize,
    splitting: shearmix::spectral::Splitting,
) -> anyhow::Result<(f64, usize, bool)> {
    let (run, _) = decay_run(solver, rho0, schedule, kappa, n_periods, splitting, &[])?;
    let s = &run.series;
    let scale = kappa.powf(1.0 + alpha) / s.l1[0];
    let (argmax, d_hat) = s
        .linf
        .iter()
        .enumerate()
        .map(|(n, v)| (n, v * (gamma * n as f64).exp() * scale))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let decays = s.linf.last().unwrap() < &s.linf[0];
    Ok((d_hat, argmax, decays))
}

pub fn run_ed_verify(cfg: &ExperimentConfig) -> anyhow::Result<EdReport> {
    require(cfg, Experiment::EdVerify)?;
    let mut warnings = Vec::new();
    let alpha = cfg.field.alpha;
    if alpha <= 0.0 {
        warnings.push(format!("α = {alpha} lies outside the α > 0 hypothesis; moments may grow"));
    }
    let (gamma, gamma_source) = match cfg.field.gamma {
        Some(g) => (g, "config".to_string()),
        None => {
            // the conservative choice: the rate at the smallest κ
            let kappa = *cfg.kappa_list.last().unwrap();
            let c = correlation_config(cfg, kappa);
            let rep = correlation_decay(&c, &seed_stream(cfg.seeds[0], "gamma"), None)?;
            (rep.gamma_hat, format!("fitted from correlations at κ={kappa}"))
        }
    };
    let jobs: Vec<(u64, f64)> = cfg
        .kappa_list
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (s, k)))
        .collect();
    let rows: Vec<EdRow> = jobs
        .par_iter()
        .map(|&(seed, kappa)| -> anyhow::Result<EdRow> {
            let n = resolved_grid(cfg.grid, cfg.amplitude, kappa);
            let solver = SpectralSolver::new(n)?;
            let rho0 = initial_field(cfg.field.initial, n, kappa, seed)?;
            let schedule = ShearSchedule::new(cfg.amplitude, cfg.profile, seed_stream(seed, "shifts"));
            let (d, argmax, decays) =
                ed_prefactor(&solver, &rho0, &schedule, kappa, gamma, alpha, cfg.field.n_periods, cfg.mixing.splitting)?;
            Ok(EdRow {
                seed,
                kappa,
                grid: n,
                d_hat: decays.then_some(d),
                argmax: decays.then_some(argmax),
                excluded: (!decays).then(|| "sup norm did not decay over the run".to_string()),
            })
        })
        .collect::<anyhow::Result<_>>()?;
    for r in rows.iter().filter(|r| r.excluded.is_some()) {
        warnings.push(format!("seed {} κ={} excluded: {}", r.seed, r.kappa, r.excluded.as_ref().unwrap()));
    }

    let d_of = |k: f64| -> Vec<f64> { rows.iter().filter(|r| r.kappa == k).filter_map(|r| r.d_hat).collect() };
    let mut moments = Vec::new();
    let mut exceedance = Vec::new();
    for &k in &cfg.kappa_list {
        let d = d_of(k);
        if d.is_empty() {
            continue;
        }
        for q in [1.0, 2.0] {
            let m = mean_ci(&d.iter().map(|v| v.powf(q)).collect::<Vec<_>>());
            moments.push(EdMoment {
                kappa: k,
                q,
                moment: m.mean,
                std_error: m.std_error(),
                n: m.n,
            });
        }
        for &beta in &cfg.field.exceedance_betas {
            let threshold = k.powf(-beta);
            exceedance.push(Exceedance {
                kappa: k,
                beta,
                threshold,
                frequency: d.iter().filter(|&&v| v >= threshold).count() as f64 / d.len() as f64,
                n: d.len(),
            });
        }
    }
    let trends: Vec<EdTrend> = [1.0, 2.0]
        .iter()
        .map(|&q| {
            let ms: Vec<&EdMoment> = moments.iter().filter(|m| m.q == q).collect();
            // a standard error needs at least two samples per κ
            let max_z = ms.iter().all(|m| m.n >= 2).then(|| {
                let mut max_z: f64 = 0.0;
                for (i, a) in ms.iter().enumerate() {
                    for b in &ms[i + 1..] {
                        let se = a.std_error.hypot(b.std_error);
                        let diff = (a.moment - b.moment).abs();
                        max_z = max_z.max(if se > 0.0 {
                            diff / se
                        } else if diff > 0.0 {
                            f64::MAX
                        } else {
                            0.0
                        });
                    }
                }
                max_z
            });
            EdTrend {
                q,
                max_z,
                flagged: max_z.is_some_and(|z| z > 2.0),
            }
        })
        .collect();
    if trends.iter().any(|t| t.max_z.is_none()) {
        warnings.push("fewer than two usable seeds per κ; no κ-trend test".into());
    }
    Ok(EdReport {
        gamma,
        gamma_source,
        alpha,
        rows,
        moments,
        trends,
        exceedance,
        warnings,
    })
}

pub fn correlation_config(cfg: &ExperimentConfig, kappa: f64) -> CorrelationConfig {
    let mut c = CorrelationConfig::new(
        cfg.amplitude,
        kappa,
        cfg.correlations.modes.iter().map(|&m| ModePair::diagonal(m)).collect(),
    );
    c.profile = cfg.profile;
    c.n_max = cfg.correlations.n_max;
    c.n_realizations = cfg.samples.n_realizations;
    c.n_particles = cfg.samples.n_particles;
    c.substeps = cfg.correlations.substeps;
    c
}

pub fn write_ed_report(rep: &EdReport, out: &mut RunDir) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.kappa.to_string(),
                r.grid.to_string(),
                cell(r.d_hat),
                cell(r.argmax),
                r.excluded.clone().unwrap_or_default(),
            ]
        })
        .collect();
    out.write_csv("d_hat.csv", &["seed", "kappa", "grid", "d_hat", "argmax_period", "excluded"], &rows)?;
    out.write_json("ed_verify.json", rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingRow {
    pub kappa: f64,
    pub width: f64,
    pub grid: usize,
    /// `‖ρ₁ − ρ̄‖_{H^α} / ‖ρ₀ − ρ̄‖_{L¹}`, averaged over seeds.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub alpha: f64,
    pub dimension: usize,
    pub amplitude: f64,
    /// `−(2α + d)/4`.
    pub expected_exponent: f64,
    /// Rows for the first width fraction come first.
    pub rows: Vec<SmoothingRow>,
    /// `ln ratio` against `ln κ` at the narrowest configured width.
    pub fit: Option<FitSummary>,
    pub exponent: Option<f64>,
    pub exponent_ci: Option<f64>,
    /// Largest relative change of the ratio between consecutive widths.
    pub width_sensitivity: Option<f64>,
}

/// `‖G_σ − 1‖_{L¹(T²)}` for a unit-mass Gaussian of per-coordinate width σ,
/// neglecting periodic images (σ ≪ 1): twice the mass above the mean.
pub fn narrow_gaussian_l1(sigma: f64) -> f64 {
    let a = 2.0 * PI * sigma * sigma;
    2.0 * (1.0 - a - a * (1.0 / a).ln())
}

/// Narrow Gaussian of width `sigma` (possibly below the grid spacing), then
/// one unit of time: heat for 1/2, a horizontal shear, heat for 1/2.
///
/// The initial Gaussian is produced from a grid delta by exact heat flow, so
/// sub-grid widths are represented through their variance.
fn smoothed_bump(
    solver: &SpectralSolver,
    sigma: f64,
    zeta: f64,
    kappa: f64,
    cfg: &ExperimentConfig,
) -> anyhow::Result<ScalarField> {
    let n = solver.n();
    let mut values = vec![0.0; n * n];
    values[0] = (n * n) as f64;
    let mut f = ScalarField::from_values(n, values)?;
    // variance 2κt per coordinate
    solver.diffuse_exact(&mut f, kappa, sigma * sigma / (2.0 * kappa) + 0.5)?;
    solver.advect_shear_exact(&mut f, zeta, Axis::Horizontal, cfg.amplitude, cfg.profile)?;
    solver.diffuse_exact(&mut f, kappa, 0.5)?;
    Ok(f)
}

pub fn run_smoothing_scaling(cfg: &ExperimentConfig) -> anyhow::Result<SmoothingReport> {
    require(cfg, Experiment::SmoothingScaling)?;
    if cfg.field.width_fractions.is_empty() {
        return Err(ConfigError("field.width_fractions is empty".into()).into());
    }
    let alpha = cfg.field.alpha;
    let jobs: Vec<(f64, f64)> = cfg
        .field
        .width_fractions
        .iter()
        .flat_map(|&w| cfg.kappa_list.iter().map(move |&k| (w, k)))
        .collect();
    let rows: Vec<SmoothingRow> = jobs
        .par_iter()
        .map(|&(frac, kappa)| -> anyhow::Result<SmoothingRow> {
            let n = resolved_grid(cfg.grid, cfg.amplitude, kappa);
            let solver = SpectralSolver::new(n)?;
            let width = frac * kappa.sqrt();
            let ratios = cfg
                .seeds
                .iter()
                .map(|&seed| -> anyhow::Result<f64> {
                    let zeta: f64 = seed_stream(seed, "shifts").random();
                    let f = smoothed_bump(&solver, width, zeta, kappa, cfg)?;
                    Ok(solver.norms(&f, &[alpha])?.sobolev[0] / narrow_gaussian_l1(width))
                })
                .collect::<anyhow::Result<Vec<f64>>>()?;
            Ok(SmoothingRow {
                kappa,
                width,
                grid: n,
                ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let nk = cfg.kappa_list.len();
    let narrow = &rows[(cfg.field.width_fractions.len() - 1) * nk..];
    let fit = FitSummary::fit(
        &narrow.iter().map(|r| r.kappa.ln()).collect::<Vec<_>>(),
        &narrow.iter().map(|r| r.ratio.ln()).collect::<Vec<_>>(),
    );
    let width_sensitivity = (cfg.field.width_fractions.len() > 1).then(|| {
        rows[..rows.len() - nk]
            .iter()
            .zip(&rows[nk..])
            .map(|(a, b)| (a.ratio - b.ratio).abs() / b.ratio)
            .fold(0.0, f64::max)
    });
    Ok(SmoothingReport {
        alpha,
        dimension: 2,
        amplitude: cfg.amplitude,
        expected_exponent: -(2.0 * alpha + 2.0) / 4.0,
        exponent: fit.as_ref().map(|f| f.slope),
        exponent_ci: fit.as_ref().map(|f| Z95 * f.slope_std_error),
        fit,
        rows,
        width_sensitivity,
    })
}

pub fn write_smoothing_report(rep: &SmoothingReport, out: &mut RunDir) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| vec![r.kappa.to_string(), r.width.to_string(), r.grid.to_string(), r.ratio.to_string()])
        .collect();
    out.write_csv("smoothing.csv", &["kappa", "width", "grid", "ratio"], &rows)?;
    out.write_json("smoothing.json", rep)
}
