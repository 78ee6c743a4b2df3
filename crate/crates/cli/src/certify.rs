//! Two-point chain diagnostics: drift certificates, Ulam gaps, the
//! difference-chain gate, Lyapunov exponents and correlation prefactors.

use serde::{Deserialize, Serialize};
use shearmix::flow::lyapunov_exponent;
use shearmix::flow::LyapunovEstimate;
use shearmix::harris::*;
use shearmix::torus::RngStream;

use crate::config::{ConfigError, Experiment, ExperimentConfig};
use crate::dissipation::correlation_config;
use crate::output::{cell, RunDir};

/// Largest allowed `|β̂(κ) − β̂(0)|`.
pub const BETA_STABILITY_TOL: f64 = 0.05;
/// `K̂(κ)` must stay within this factor of `K̂(0)`.
pub const K_STABILITY_FACTOR: f64 = 2.0;
/// Largest allowed relative spread `(max − min)/max` of the Ulam gaps.
pub const GAP_SPREAD_TOL: f64 = 0.2;
/// Per-bin `|z|` bound of the difference-chain gate.
pub const GATE_Z_TOL: f64 = 4.0;

fn require(cfg: &ExperimentConfig, e: Experiment) -> anyhow::Result<()> {
    if cfg.experiment != e {
        return Err(ConfigError(format!("expected experiment {e:?}, got {:?}", cfg.experiment)).into());
    }
    cfg.validate()
}

fn master(cfg: &ExperimentConfig, label: &str) -> RngStream {
    RngStream::new(cfg.seeds[0], 0).keyed(label, 0)
}

fn drift_grid(cfg: &ExperimentConfig) -> DriftGrid {
    DriftGrid {
        n_radii: cfg.drift.n_radii,
        n_directions: cfg.drift.n_directions,
        n_outer_radii: cfg.drift.n_outer_radii,
        ..DriftGrid::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub kappa: f64,
    pub beta_hat: f64,
    pub beta_ci: f64,
    pub k_hat: f64,
    pub k_ci: f64,
    pub pass: bool,
    /// `|β̂(κ) − β̂(0)|`.
    pub beta_shift: f64,
    pub k_ratio: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCertReport {
    pub params: LyapunovParams,
    pub candidates: Vec<f64>,
    pub certified_amplitude: Option<f64>,
    pub search: Vec<DriftReport>,
    pub negative_control: DriftReport,
    pub stability: Vec<StabilityRow>,
    /// Every κ row is stable; `None` without a certified amplitude.
    pub stable: Option<bool>,
    pub warnings: Vec<String>,
}

pub fn run_drift_cert(cfg: &ExperimentConfig) -> anyhow::Result<DriftCertReport> {
    require(cfg, Experiment::DriftCert)?;
    let d = &cfg.drift;
    let grid = drift_grid(cfg);
    let rng = master(cfg, "drift");
    let n = cfg.samples.shift_samples;
    let search = find_certified_amplitude(&d.candidates, cfg.profile, 0.0, &d.params, &grid, n, &rng)?;
    let control = drift_certificate(
        &PairDynamics::new(d.negative_control, cfg.profile, 0.0)?,
        &d.params,
        &grid,
        1,
        n,
        &rng.keyed("negative-control", 0),
        None,
    )?;
    let mut warnings = Vec::new();
    if control.pass {
        warnings.push(format!("negative control A={} unexpectedly passes", d.negative_control));
    }
    let mut search_reports = search.reports;
    let mut stability = Vec::new();
    match search.certified {
        Some(a) => {
            let idx = search_reports.len() - 1;
            let base = &search_reports[idx];
            // same cell streams as the κ = 0 certificate
            let stream = rng.keyed("amplitude", idx as u64);
            for &kappa in &cfg.kappa_list {
                let r = drift_certificate(&PairDynamics::new(a, cfg.profile, kappa)?, &d.params, &grid, 1, n, &stream, None)?;
                let beta_shift = (r.beta_hat - base.beta_hat).abs();
                let k_ratio = r.k_hat / base.k_hat;
                stability.push(StabilityRow {
                    kappa,
                    beta_hat: r.beta_hat,
                    beta_ci: r.beta_ci,
                    k_hat: r.k_hat,
                    k_ci: r.k_ci,
                    pass: r.pass,
                    beta_shift,
                    k_ratio,
                    stable: beta_shift <= BETA_STABILITY_TOL
                        && r.k_hat.is_finite()
                        && (1.0 / K_STABILITY_FACTOR..=K_STABILITY_FACTOR).contains(&k_ratio),
                });
            }
        }
        None => {
            warnings.push("no candidate amplitude passes the single-step certificate".into());
            if let (Some(l), Some(&a)) = (d.multi_steps, d.candidates.last()) {
                let r = drift_certificate(
                    &PairDynamics::new(a, cfg.profile, 0.0)?,
                    &d.params,
                    &grid,
                    1,
                    n,
                    &rng.keyed("multi-step", 0),
                    Some(l),
                )?;
                if let Some(steps) = r.certified_steps() {
                    warnings.push(format!("A={a} passes the {steps}-step drift"));
                }
                search_reports.push(r);
            }
        }
    }
    let stable = search.certified.map(|_| stability.iter().all(|r| r.stable));
    Ok(DriftCertReport {
        params: d.params,
        candidates: d.candidates.clone(),
        certified_amplitude: search.certified,
        search: search_reports,
        negative_control: control,
        stability,
        stable,
        warnings,
    })
}

pub fn write_drift_cert(rep: &DriftCertReport, out: &mut RunDir) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    let mut push = |r: &DriftReport| {
        for (kind, cells) in [("inner", &r.cells), ("outer", &r.outer_cells)] {
            for c in cells {
                rows.push(vec![
                    r.amplitude.to_string(),
                    r.kappa.to_string(),
                    r.steps.to_string(),
                    kind.to_string(),
                    c.radius.to_string(),
                    c.angle.to_string(),
                    c.value.to_string(),
                    c.ci.to_string(),
                ]);
            }
        }
    };
    rep.search.iter().for_each(&mut push);
    push(&rep.negative_control);
    out.write_csv(
        "drift_cells.csv",
        &["amplitude", "kappa", "steps", "kind", "radius", "angle", "value", "ci"],
        &rows,
    )?;
    out.write_json("drift.json", rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub kappa: f64,
    pub validation: DifferenceValidation,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamRow {
    pub kappa: f64,
    pub gap: GapEstimate,
    pub contraction: ContractionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamReport {
    pub amplitude: f64,
    pub m_bins: usize,
    pub samples_per_bin: usize,
    pub gate: Vec<GateRow>,
    pub gate_pass: bool,
    /// Empty when the gate failed.
    pub chains: Vec<UlamRow>,
    /// `(max − min)/max` of the gaps.
    pub gap_spread: Option<f64>,
    pub gap_uniform: Option<bool>,
    pub contracts: Option<bool>,
    pub warnings: Vec<String>,
}

/// Runs the difference-chain gate; the Ulam chains are built only if it passes.
pub fn run_ulam_gap(cfg: &ExperimentConfig) -> anyhow::Result<UlamReport> {
    require(cfg, Experiment::UlamGap)?;
    let a = cfg.amplitude;
    let rng = master(cfg, "ulam");
    let gate = cfg
        .ulam
        .gate_kappas
        .iter()
        .enumerate()
        .map(|(i, &kappa)| -> anyhow::Result<GateRow> {
            let v = difference_chain_validation(
                &PairDynamics::new(a, cfg.profile, kappa)?,
                cfg.samples.difference_samples,
                &rng.keyed("gate", i as u64),
            )?;
            Ok(GateRow {
                kappa,
                pass: v.max_abs_z < GATE_Z_TOL,
                validation: v,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let gate_pass = gate.iter().all(|g| g.pass);
    let mut warnings = Vec::new();
    let mut chains = Vec::new();
    if gate_pass {
        let kappas: Vec<f64> = std::iter::once(0.0).chain(cfg.kappa_list.iter().copied()).collect();
        for (i, &kappa) in kappas.iter().enumerate() {
            let stream = rng.keyed("chain", i as u64);
            let chain = ulam_build(
                &PairDynamics::new(a, cfg.profile, kappa)?,
                cfg.samples.ulam_bins,
                cfg.samples.samples_per_bin,
                &stream,
            )?;
            let contraction = contraction_factor(
                &chain,
                &cfg.drift.params,
                cfg.ulam.beta_weight,
                cfg.ulam.steps,
                cfg.samples.contraction_pairs,
                &stream,
            )?;
            if !contraction.spectral_gap.converged {
                warnings.push(format!("κ={kappa}: power iteration did not converge"));
            }
            chains.push(UlamRow {
                kappa,
                gap: contraction.spectral_gap,
                contraction,
            });
        }
    } else {
        warnings.push("difference-chain gate failed; Ulam chains not built".into());
    }
    let gaps: Vec<f64> = chains.iter().map(|c| c.gap.gap).collect();
    let gap_spread = (!gaps.is_empty()).then(|| {
        let hi = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        if hi > 0.0 {
            (hi - lo) / hi
        } else {
            f64::INFINITY
        }
    });
    Ok(UlamReport {
        amplitude: a,
        m_bins: cfg.samples.ulam_bins,
        samples_per_bin: cfg.samples.samples_per_bin,
        gap_uniform: gap_spread.map(|s| gaps.iter().all(|&g| g > 0.0) && s < GAP_SPREAD_TOL),
        contracts: (!chains.is_empty()).then(|| chains.iter().all(|c| c.contraction.alpha_bar_hat < 1.0)),
        gap_spread,
        gate,
        gate_pass,
        chains,
        warnings,
    })
}

pub fn write_ulam_report(rep: &UlamReport, out: &mut RunDir) -> anyhow::Result<()> {
    let gate: Vec<Vec<String>> = rep
        .gate
        .iter()
        .flat_map(|g| {
            g.validation.z.iter().enumerate().map(move |(b, z)| {
                vec![
                    g.kappa.to_string(),
                    b.to_string(),
                    g.validation.counts_full[b].to_string(),
                    g.validation.counts_reduced[b].to_string(),
                    z.to_string(),
                ]
            })
        })
        .collect();
    out.write_csv("difference_gate.csv", &["kappa", "bin", "count_full", "count_reduced", "z"], &gate)?;
    let rows: Vec<Vec<String>> = rep
        .chains
        .iter()
        .map(|c| {
            vec![
                c.kappa.to_string(),
                c.gap.lambda2.to_string(),
                c.gap.gap.to_string(),
                c.gap.converged.to_string(),
                c.contraction.alpha_bar_hat.to_string(),
            ]
        })
        .collect();
    out.write_csv("ulam_gap.csv", &["kappa", "lambda2", "gap", "converged", "contraction"], &rows)?;
    out.write_json("ulam.json", rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub amplitude: f64,
    pub estimate: LyapunovEstimate,
    pub positive: bool,
}

pub fn run_exponent(cfg: &ExperimentConfig) -> anyhow::Result<ExponentReport> {
    require(cfg, Experiment::Exponent)?;
    let estimate = lyapunov_exponent(
        cfg.amplitude,
        cfg.profile,
        cfg.samples.lyapunov_steps,
        cfg.samples.lyapunov_samples,
        &master(cfg, "exponent"),
    )?;
    Ok(ExponentReport {
        amplitude: cfg.amplitude,
        positive: estimate.estimate - estimate.ci95 > 0.0,
        estimate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub q: f64,
    pub moments: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Largest `|m_a − m_b| / √(se_a² + se_b²)` over κ pairs (0 if all agree
    /// exactly).
    pub max_z: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub kappa: f64,
    pub zeta: f64,
    pub d_hat_mean: f64,
    pub d_hat_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationsReport {
    pub amplitude: f64,
    pub kappas: Vec<f64>,
    pub table: MomentTable,
    /// Every mode has a positive rate (fitted or lower bound) at every κ.
    pub gamma_positive: bool,
    pub moment_checks: Vec<MomentCheck>,
    pub moments_agree: bool,
    pub refresh: RefreshReport,
    pub refresh_kappa: f64,
    /// Within-shift spread does not exceed the cross-shift spread.
    pub refresh_insensitive: bool,
    /// D̂ recomputed with ζ = γ̂ (not gating).
    pub sensitivity: Vec<SensitivityRow>,
    pub warnings: Vec<String>,
}

fn pairwise_max_z(m: &[f64], se: &[f64]) -> f64 {
    let mut max_z: f64 = 0.0;
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let diff = (m[i] - m[j]).abs();
            let s = se[i].hypot(se[j]);
            let z = if s > 0.0 {
                diff / s
            } else if diff > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            max_z = max_z.max(z);
        }
    }
    max_z
}

pub fn run_correlations(cfg: &ExperimentConfig) -> anyhow::Result<CorrelationsReport> {
    require(cfg, Experiment::Correlations)?;
    let rng = master(cfg, "correlations");
    let base = correlation_config(cfg, cfg.kappa_list[0]);
    let table = dkappa_moments(&base, &cfg.kappa_list, &cfg.correlations.q_list, &rng.keyed("moments", 0))?;
    let mut warnings = Vec::new();
    let gamma_positive = table
        .reports
        .iter()
        .all(|r| r.gamma_fits.iter().all(|f| f.gamma.is_some_and(|g| g > 0.0)));
    for r in &table.reports {
        for (f, m) in r.gamma_fits.iter().zip(&r.modes) {
            if f.flag != GammaFlag::Fitted {
                warnings.push(format!("κ={} mode {:?}: rate flagged {:?}", r.kappa, m.m, f.flag));
            }
        }
    }
    let moment_checks: Vec<MomentCheck> = cfg
        .correlations
        .q_list
        .iter()
        .map(|&q| {
            let rows: Vec<&MomentRow> = cfg.kappa_list.iter().filter_map(|&k| table.row(k, q)).collect();
            let moments: Vec<f64> = rows.iter().map(|r| r.moment).collect();
            let std_errors: Vec<f64> = rows.iter().map(|r| r.std_error).collect();
            let max_z = pairwise_max_z(&moments, &std_errors);
            MomentCheck {
                q,
                moments,
                std_errors,
                max_z,
                agree: max_z <= 2.0,
            }
        })
        .collect();
    let moments_agree = moment_checks.iter().all(|c| c.agree);

    let refresh_kappa = *cfg.kappa_list.last().unwrap();
    let mut rc = correlation_config(cfg, refresh_kappa);
    rc.n_realizations = cfg.correlations.refresh_realizations;
    let refresh = noise_refresh_spread(&rc, cfg.samples.n_refresh, table.zeta, &rng.keyed("refresh", 0))?;
    let refresh_insensitive = refresh.within_sd <= refresh.cross_sd;

    let gamma_min = table.gamma_per_kappa.iter().copied().fold(f64::INFINITY, f64::min);
    let sensitivity = table
        .reports
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.reanalyze(&correlation_config(cfg, r.kappa), gamma_min);
            SensitivityRow {
                kappa: r.kappa,
                zeta: gamma_min,
                d_hat_mean: r.d_hat_mean,
                d_hat_sd: r.d_hat_sd,
            }
        })
        .collect();
    if table.reports.iter().all(|r| r.d_hats().iter().all(|&d| d == 1.0)) {
        warnings.push(format!(
            "every D̂ equals 1 at ζ = {:.3}: no correlation exceeds e^(−ζn) after the first period",
            table.zeta
        ));
    }
    Ok(CorrelationsReport {
        amplitude: cfg.amplitude,
        kappas: cfg.kappa_list.clone(),
        table,
        gamma_positive,
        moment_checks,
        moments_agree,
        refresh,
        refresh_kappa,
        refresh_insensitive,
        sensitivity,
        warnings,
    })
}

pub fn write_correlations(rep: &CorrelationsReport, out: &mut RunDir) -> anyhow::Result<()> {
    let mut series = Vec::new();
    let mut d_hat = Vec::new();
    for r in &rep.table.reports {
        for (real, per_mode) in r.series.iter().enumerate() {
            for (j, s) in per_mode.iter().enumerate() {
                for (n, c) in s.iter().enumerate() {
                    series.push(vec![
                        r.kappa.to_string(),
                        real.to_string(),
                        format!("{:?}", r.modes[j].m),
                        n.to_string(),
                        c.to_string(),
                    ]);
                }
            }
            let e = &r.estimates[real];
            d_hat.push(vec![
                r.kappa.to_string(),
                real.to_string(),
                e.k_kappa.to_string(),
                e.d_hat.to_string(),
            ]);
        }
    }
    out.write_csv("correlation_series.csv", &["kappa", "realization", "mode", "n", "correlation"], &series)?;
    out.write_csv("d_hat.csv", &["kappa", "realization", "k_kappa", "d_hat"], &d_hat)?;
    let gammas: Vec<Vec<String>> = rep
        .table
        .reports
        .iter()
        .flat_map(|r| {
            r.gamma_fits.iter().zip(&r.modes).map(move |(f, m)| {
                vec![
                    r.kappa.to_string(),
                    format!("{:?}", m.m),
                    cell(f.gamma),
                    format!("{:?}", f.flag),
                    f.points.to_string(),
                ]
            })
        })
        .collect();
    out.write_csv("gamma.csv", &["kappa", "mode", "gamma", "flag", "points"], &gammas)?;
    out.write_json("correlations.json", rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_z_handles_zero_errors() {
        assert_eq!(pairwise_max_z(&[1.0, 1.0], &[0.0, 0.0]), 0.0);
        assert!(pairwise_max_z(&[1.0, 2.0], &[0.0, 0.0]).is_infinite());
        assert!((pairwise_max_z(&[1.0, 2.0, 1.5], &[0.3, 0.4, 0.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exponent_is_positive_for_strong_shear() {
        let mut c = ExperimentConfig::default_for(Experiment::Exponent);
        c.samples.lyapunov_steps = 200;
        c.samples.lyapunov_samples = 20;
        let r = run_exponent(&c).unwrap();
        assert!(r.positive, "{r:?}");
    }

    #[test]
    fn experiment_mismatch_is_a_config_error() {
        let c = ExperimentConfig::default_for(Experiment::Exponent);
        for e in [run_drift_cert(&c).err(), run_ulam_gap(&c).err(), run_correlations(&c).err()] {
            assert!(e.unwrap().downcast_ref::<ConfigError>().is_some());
        }
    }

    #[test]
    fn small_ulam_run_builds_gated_chains() {
        let mut c = ExperimentConfig::default_for(Experiment::UlamGap);
        c.kappa_list = vec![1e-2];
        c.samples.difference_samples = 20_000;
        c.samples.ulam_bins = 8;
        c.samples.samples_per_bin = 1000;
        c.samples.contraction_pairs = 100;
        c.ulam.gate_kappas = vec![0.0];
        let r = run_ulam_gap(&c).unwrap();
        assert!(r.gate_pass);
        assert_eq!(r.chains.len(), 2);
        assert!(r.chains.iter().all(|c| c.gap.gap > 0.0));
        assert!(r.gap_spread.is_some() && r.contracts.is_some());
    }
}
