//! Uniform mixing time across diffusivities and the `a + b ln(1/κ)` fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shearmix::flow::ShearSchedule;
use shearmix::spectral::{is_resolved, mixing_time, resolved_grid, SpectralSolver};
use shearmix::torus::RngStream;

use crate::config::{ConfigError, Experiment, ExperimentConfig};
use crate::output::{cell, FitSummary, RunDir};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingPoint {
    pub kappa: f64,
    pub grid: usize,
    pub t_mix_per_seed: Vec<Option<usize>>,
    /// Mean over seeds; `None` if any seed failed to mix.
    pub t_mix: Option<f64>,
    /// Heat-only (A = 0) mixing time on the same grid.
    pub t_heat: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub kappa: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingCurve {
    pub amplitude: f64,
    pub epsilon: f64,
    pub kappa_list: Vec<f64>,
    pub points: Vec<MixingPoint>,
    /// `t_mix = a + b ln(1/κ)`, x = ln(1/κ).
    pub fit: Option<FitSummary>,
    /// `t_heat = a + b/κ`, x = 1/κ.
    pub baseline_fit: Option<FitSummary>,
    pub excluded: Vec<Exclusion>,
    pub warnings: Vec<String>,
}

fn shift_stream(seed: u64) -> RngStream {
    RngStream::new(seed, 0).keyed("shifts", 0)
}

pub fn run_mixing_sweep(cfg: &ExperimentConfig) -> anyhow::Result<MixingCurve> {
    if cfg.experiment != Experiment::MixingSweep {
        return Err(ConfigError("run_mixing_sweep needs experiment = mixing_sweep".into()).into());
    }
    cfg.validate()?;
    let a = cfg.amplitude;
    let grids: Vec<usize> = cfg.kappa_list.iter().map(|&k| resolved_grid(cfg.grid, a, k)).collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.kappa_list.len())
        .flat_map(|i| (0..cfg.seeds.len()).map(move |s| (i, s)))
        .collect();
    let results: Vec<Option<usize>> = jobs
        .par_iter()
        .map(|&(i, s)| -> anyhow::Result<Option<usize>> {
            let solver = SpectralSolver::new(grids[i])?;
            let schedule = ShearSchedule::new(a, cfg.profile, shift_stream(cfg.seeds[s]));
            Ok(mixing_time(&solver, cfg.kappa_list[i], &schedule, &cfg.mixing)?.t_mix)
        })
        .collect::<anyhow::Result<_>>()?;
    let heat: Vec<Option<usize>> = cfg
        .kappa_list
        .par_iter()
        .zip(&grids)
        .map(|(&k, &n)| -> anyhow::Result<Option<usize>> {
            let solver = SpectralSolver::new(n)?;
            let schedule = ShearSchedule::new(0.0, cfg.profile, shift_stream(0));
            Ok(mixing_time(&solver, k, &schedule, &cfg.mixing)?.t_mix)
        })
        .collect::<anyhow::Result<_>>()?;

    let mut warnings = Vec::new();
    let mut excluded = Vec::new();
    let mut points = Vec::new();
    for (i, &kappa) in cfg.kappa_list.iter().enumerate() {
        let per_seed: Vec<Option<usize>> = results[i * cfg.seeds.len()..(i + 1) * cfg.seeds.len()].to_vec();
        let t_mix = if per_seed.iter().all(Option::is_some) {
            Some(per_seed.iter().map(|t| t.unwrap() as f64).sum::<f64>() / per_seed.len() as f64)
        } else {
            None
        };
        if grids[i] > cfg.grid {
            warnings.push(format!("κ={kappa}: grid raised from {} to {} by the resolution rule", cfg.grid, grids[i]));
        }
        if !is_resolved(grids[i], a, kappa) {
            excluded.push(Exclusion {
                kappa,
                reason: format!("grid {} under-resolved", grids[i]),
            });
        } else if t_mix.is_none() {
            excluded.push(Exclusion {
                kappa,
                reason: format!("did not mix within {} periods", cfg.mixing.max_periods),
            });
        }
        points.push(MixingPoint {
            kappa,
            grid: grids[i],
            t_mix_per_seed: per_seed,
            t_mix,
            t_heat: heat[i],
        });
    }
    // integer-period quantization dominates very short mixing times
    if let Some(first) = points.first() {
        if first.t_mix.is_some_and(|t| t <= 2.0) && !excluded.iter().any(|e| e.kappa == first.kappa) {
            excluded.push(Exclusion {
                kappa: first.kappa,
                reason: "largest κ mixes within 2 periods".into(),
            });
        }
    }
    let usable: Vec<&MixingPoint> = points
        .iter()
        .filter(|p| !excluded.iter().any(|e| e.kappa == p.kappa))
        .collect();
    let fit = FitSummary::fit(
        &usable.iter().map(|p| (1.0 / p.kappa).ln()).collect::<Vec<_>>(),
        &usable.iter().map(|p| p.t_mix.unwrap()).collect::<Vec<_>>(),
    );
    if fit.is_none() {
        warnings.push(format!("only {} usable points; no fit emitted", usable.len()));
    }
    let heat_points: Vec<&MixingPoint> = points.iter().filter(|p| p.t_heat.is_some()).collect();
    let baseline_fit = FitSummary::fit(
        &heat_points.iter().map(|p| 1.0 / p.kappa).collect::<Vec<_>>(),
        &heat_points.iter().map(|p| p.t_heat.unwrap() as f64).collect::<Vec<_>>(),
    );
    Ok(MixingCurve {
        amplitude: a,
        epsilon: cfg.mixing.epsilon,
        kappa_list: cfg.kappa_list.clone(),
        points,
        fit,
        baseline_fit,
        excluded,
        warnings,
    })
}

pub fn write_mixing_curve(curve: &MixingCurve, seeds: &[u64], out: &mut RunDir) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .map(|p| {
            vec![
                p.kappa.to_string(),
                (1.0 / p.kappa).ln().to_string(),
                p.grid.to_string(),
                cell(p.t_mix),
                cell(p.t_heat),
                (!curve.excluded.iter().any(|e| e.kappa == p.kappa)).to_string(),
            ]
        })
        .collect();
    out.write_csv("t_mix.csv", &["kappa", "ln_inv_kappa", "grid", "t_mix", "t_heat", "in_fit"], &rows)?;
    let seed_rows: Vec<Vec<String>> = curve
        .points
        .iter()
        .flat_map(|p| {
            p.t_mix_per_seed
                .iter()
                .zip(seeds)
                .map(|(t, s)| vec![p.kappa.to_string(), s.to_string(), cell(*t)])
        })
        .collect();
    out.write_csv("t_mix_seeds.csv", &["kappa", "seed", "t_mix"], &seed_rows)?;
    out.write_json("fit.json", curve)
}
