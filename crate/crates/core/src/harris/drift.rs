//! Monte Carlo drift ratios `E[V(step)] / V` and the drift certificate.
//!
//! β̂ is taken over separations small enough that `l` periods cannot leave
//! `Δ(s*)` (Lipschitz bound `(1 + A·max|g'|)^{2l}`), so the constant
//! extension of V never enters the ratio. Larger separations only contribute
//! to the additive constant K̂.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LyapunovParams, PairDynamics};
use crate::error::{invalid_arg, Result};
use crate::flow::{Profile, SeparatedPair, TwoPointState};
use crate::stats::{mean_ci, MeanCi};
use crate::torus::{Displacement, RngStream, TorusPoint};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    /// Half-width of the 95% interval.
    pub ci: f64,
    pub n: usize,
}

impl From<MeanCi> for RatioEstimate {
    fn from(m: MeanCi) -> Self {
        RatioEstimate {
            ratio: m.mean,
            ci: m.half_width,
            n: m.n,
        }
    }
}

fn run_pairs<R: Rng + ?Sized>(
    dynamics: &PairDynamics,
    steps: usize,
    n: usize,
    rng: &mut R,
    mut start: impl FnMut(&mut R) -> SeparatedPair,
    mut score: impl FnMut(&SeparatedPair, &SeparatedPair) -> f64,
) -> MeanCi {
    let mut path = dynamics.new_path();
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let s0 = start(rng);
            let mut s = s0;
            for _ in 0..steps {
                s = dynamics.step_pair(&s, &mut path, rng);
            }
            score(&s0, &s)
        })
        .collect();
    mean_ci(&xs)
}

/// `E[V(l periods of s)] / V(s)` over fresh shifts (and noise), with a 95%
/// interval.
pub fn drift_ratio<R: Rng + ?Sized>(
    s: &TwoPointState,
    dynamics: &PairDynamics,
    params: &LyapunovParams,
    steps: usize,
    n_shift_samples: usize,
    rng: &mut R,
) -> Result<RatioEstimate> {
    params.validate()?;
    let r = s.separation().norm_linf();
    if !(r > 0.0 && r < params.s_star) {
        return Err(invalid_arg(format!(
            "pair separation {r} is not inside (0, s_star)"
        )));
    }
    if n_shift_samples < 1000 {
        return Err(invalid_arg("drift ratios need at least 1000 shift samples"));
    }
    if steps == 0 {
        return Err(invalid_arg("steps must be >= 1"));
    }
    let start = SeparatedPair::from_state(s);
    let v0 = params.v_of_sep(start.sep);
    let m = run_pairs(dynamics, steps, n_shift_samples, rng, |_| start, |_, s| {
        params.v_of_sep(s.sep) / v0
    });
    Ok(m.into())
}

/// Separation grid of the certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftGrid {
    /// Log-spaced radii in `[r_min, zone radius]`.
    pub n_radii: usize,
    /// Directions `θ_j = πj / n_directions`, scaled to ℓ∞ length r.
    pub n_directions: usize,
    pub r_min: f64,
    /// Log-spaced radii in `[zone radius, 1/2]` for K̂.
    pub n_outer_radii: usize,
}

impl Default for DriftGrid {
    fn default() -> Self {
        DriftGrid {
            n_radii: 8,
            n_directions: 16,
            r_min: 10.0 * f64::EPSILON,
            n_outer_radii: 8,
        }
    }
}

/// Largest ℓ∞ separation from which `steps` periods stay in `Δ(s*)`.
pub fn zone_radius(amplitude: f64, profile: Profile, params: &LyapunovParams, steps: usize) -> f64 {
    let lip = 1.0 + amplitude.abs() * profile.max_slope();
    params.s_star / lip.powi(2 * steps as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCell {
    pub radius: f64,
    pub angle: f64,
    pub separation: [f64; 2],
    /// Ratio `E[V∘step]/V` for inner cells, `E[V∘step]` for outer cells.
    pub value: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub amplitude: f64,
    pub profile: Profile,
    pub kappa: f64,
    pub params: LyapunovParams,
    pub steps: usize,
    pub n_shift_samples: usize,
    pub zone_radius: f64,
    pub beta_hat: f64,
    pub beta_ci: f64,
    pub worst_cell: DriftCell,
    pub k_hat: f64,
    pub k_ci: f64,
    pub pass: bool,
    pub cells: Vec<DriftCell>,
    pub outer_cells: Vec<DriftCell>,
    /// Report for the multi-step drift, attached when the single step fails.
    pub multi_step: Option<Box<DriftReport>>,
}

impl DriftReport {
    /// Number of periods of the first passing drift, if any.
    pub fn certified_steps(&self) -> Option<usize> {
        if self.pass {
            Some(self.steps)
        } else {
            self.multi_step.as_ref().and_then(|m| m.certified_steps())
        }
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn direction(radius: f64, angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    let scale = radius / c.abs().max(s.abs());
    [c * scale, s * scale]
}

/// Drift certificate over the separation grid; one independent substream
/// per cell.
///
/// With `multi_steps = Some(l)` and a failing single-step drift, the `l`-step
/// drift is also computed and attached.
pub fn drift_certificate(
    dynamics: &PairDynamics,
    params: &LyapunovParams,
    grid: &DriftGrid,
    steps: usize,
    n_shift_samples: usize,
    rng: &RngStream,
    multi_steps: Option<usize>,
) -> Result<DriftReport> {
    params.validate()?;
    dynamics.validate()?;
    if steps == 0 || grid.n_radii == 0 || grid.n_directions == 0 || grid.n_outer_radii == 0 {
        return Err(invalid_arg("steps and grid sizes must be >= 1"));
    }
    if n_shift_samples < 1000 {
        return Err(invalid_arg("drift certificate needs at least 1000 shift samples per cell"));
    }
    let zone = zone_radius(dynamics.amplitude, dynamics.profile, params, steps);
    if zone <= grid.r_min {
        return Err(invalid_arg(format!(
            "diagonal zone {zone:e} is below r_min {:e}; use fewer steps",
            grid.r_min
        )));
    }
    let cells_of = |radii: &[f64]| -> Vec<(f64, f64)> {
        radii
            .iter()
            .flat_map(|&r| {
                (0..grid.n_directions)
                    .map(move |j| (r, std::f64::consts::PI * j as f64 / grid.n_directions as f64))
            })
            .collect()
    };
    let inner = cells_of(&log_space(grid.r_min, zone, grid.n_radii));
    let outer = cells_of(&log_space(zone, 0.5, grid.n_outer_radii));

    let evaluate = |label: &str, idx: usize, r: f64, angle: f64, ratio: bool| -> DriftCell {
        let mut crng = rng.keyed(label, idx as u64);
        let sep = direction(r, angle);
        let d = Displacement::reduce(sep[0], sep[1]);
        let v0 = params.v_of_sep(d);
        let m = run_pairs(
            dynamics,
            steps,
            n_shift_samples,
            &mut crng,
            |g| SeparatedPair::new(TorusPoint::uniform(g), d),
            |_, s| {
                let v = params.v_of_sep(s.sep);
                if ratio {
                    v / v0
                } else {
                    v
                }
            },
        );
        DriftCell {
            radius: r,
            angle,
            separation: sep,
            value: m.mean,
            ci: m.half_width,
        }
    };
    let cells: Vec<DriftCell> = inner
        .par_iter()
        .enumerate()
        .map(|(i, &(r, a))| evaluate("drift-inner", i, r, a, true))
        .collect();
    let outer_cells: Vec<DriftCell> = outer
        .par_iter()
        .enumerate()
        .map(|(i, &(r, a))| evaluate("drift-outer", i, r, a, false))
        .collect();

    let pick = |cs: &[DriftCell]| -> DriftCell {
        *cs.iter()
            .max_by(|a, b| (a.value + a.ci).total_cmp(&(b.value + b.ci)))
            .expect("non-empty grid")
    };
    let worst = pick(&cells);
    let k_cell = pick(&outer_cells);
    let mut report = DriftReport {
        amplitude: dynamics.amplitude,
        profile: dynamics.profile,
        kappa: dynamics.kappa,
        params: *params,
        steps,
        n_shift_samples,
        zone_radius: zone,
        beta_hat: worst.value,
        beta_ci: worst.ci,
        worst_cell: worst,
        k_hat: k_cell.value,
        k_ci: k_cell.ci,
        pass: worst.value + worst.ci < 1.0,
        cells,
        outer_cells,
        multi_step: None,
    };
    if let Some(l) = multi_steps {
        if !report.pass && l > steps {
            let multi = drift_certificate(
                dynamics,
                params,
                grid,
                l,
                n_shift_samples,
                &rng.keyed("multi-step", l as u64),
                None,
            )?;
            report.multi_step = Some(Box::new(multi));
        }
    }
    Ok(report)
}

/// Result of scanning amplitudes for a passing single-step certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSearch {
    pub certified: Option<f64>,
    pub reports: Vec<DriftReport>,
}

/// Tries the candidate amplitudes in order and stops at the first one whose
/// single-step certificate passes.
pub fn find_certified_amplitude(
    candidates: &[f64],
    profile: Profile,
    kappa: f64,
    params: &LyapunovParams,
    grid: &DriftGrid,
    n_shift_samples: usize,
    rng: &RngStream,
) -> Result<AmplitudeSearch> {
    let mut reports = Vec::new();
    for (i, &a) in candidates.iter().enumerate() {
        let dynamics = PairDynamics::new(a, profile, kappa)?;
        let report = drift_certificate(
            &dynamics,
            params,
            grid,
            1,
            n_shift_samples,
            &rng.keyed("amplitude", i as u64),
            None,
        )?;
        let pass = report.pass;
        reports.push(report);
        if pass {
            return Ok(AmplitudeSearch {
                certified: Some(a),
                reports,
            });
        }
    }
    Ok(AmplitudeSearch {
        certified: None,
        reports,
    })
}
