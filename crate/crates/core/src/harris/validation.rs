//! Minorization estimates and the check that the separation-only chain has
//! the same one-step law as the full two-point chain.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PairDynamics;
use crate::error::{invalid_arg, Result};
use crate::flow::{SeparatedPair, TwoPointState};
use crate::stats::wilson_interval;
use crate::torus::{Displacement, RngStream, TorusPoint};

/// A set of separations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SeparationSet {
    Empty,
    /// `d1 ∈ [lo, hi)` and `d2 ∈ [lo, hi)` in signed coordinates.
    Box { d1: [f64; 2], d2: [f64; 2] },
    /// `|d|_∞ ≥ r`.
    LinfAtLeast { r: f64 },
}

impl SeparationSet {
    pub fn contains(&self, d: Displacement) -> bool {
        match *self {
            SeparationSet::Empty => false,
            SeparationSet::Box { d1, d2 } => {
                d.d1 >= d1[0] && d.d1 < d1[1] && d.d2 >= d2[0] && d.d2 < d2[1]
            }
            SeparationSet::LinfAtLeast { r } => d.norm_linf() >= r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorizationReport {
    pub steps: usize,
    /// Smallest empirical hitting probability over the starts.
    pub alpha_hat: f64,
    /// Smallest Wilson lower bound over the starts.
    pub alpha_lower: f64,
    pub per_start: Vec<f64>,
    /// Start with the smallest hitting probability.
    pub worst_start: usize,
}

/// Probability that `steps` periods from each start land in `target`.
pub fn minorization_estimate(
    starts: &[TwoPointState],
    dynamics: &PairDynamics,
    steps: usize,
    target: &SeparationSet,
    n_samples: usize,
    rng: &RngStream,
) -> Result<MinorizationReport> {
    if starts.is_empty() || steps == 0 || n_samples == 0 {
        return Err(invalid_arg("need starts, steps >= 1 and n_samples >= 1"));
    }
    let hits: Vec<u64> = starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if matches!(target, SeparationSet::Empty) {
                return 0;
            }
            let mut g = rng.keyed("minorization", i as u64);
            let mut path = dynamics.new_path();
            let start = SeparatedPair::from_state(s);
            (0..n_samples)
                .filter(|_| {
                    let mut p = start;
                    for _ in 0..steps {
                        p = dynamics.step_pair(&p, &mut path, &mut g);
                    }
                    target.contains(p.sep)
                })
                .count() as u64
        })
        .collect();
    let per_start: Vec<f64> = hits.iter().map(|&h| h as f64 / n_samples as f64).collect();
    let worst_start = (0..per_start.len())
        .min_by(|&a, &b| per_start[a].total_cmp(&per_start[b]))
        .unwrap();
    let alpha_lower = hits
        .iter()
        .map(|&h| wilson_interval(h, n_samples as u64).0)
        .fold(f64::INFINITY, f64::min);
    Ok(MinorizationReport {
        steps,
        alpha_hat: per_start[worst_start],
        alpha_lower,
        per_start,
        worst_start,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceValidation {
    pub n_samples: usize,
    pub base_point: [f64; 2],
    /// Separation counts per coarse bin (8 × 8, row-major in `d2`).
    pub counts_full: Vec<u64>,
    pub counts_reduced: Vec<u64>,
    /// Two-proportion z-score per bin.
    pub z: Vec<f64>,
    pub max_abs_z: f64,
}

const COARSE: usize = 8;
const CHUNK: usize = 10_000;

fn coarse_bin(d: Displacement) -> usize {
    let b = |v: f64| (((v + 0.5) * COARSE as f64).floor() as usize).min(COARSE - 1);
    b(d.d2) * COARSE + b(d.d1)
}

/// One-step separation law of (a) the two-point chain from a fixed base
/// point versus (b) the separation chain with a uniformly resampled base
/// point. Both arms use the same separation draws (uniform on the torus);
/// shifts and noise are independent between arms.
pub fn difference_chain_validation(
    dynamics: &PairDynamics,
    n_samples: usize,
    rng: &RngStream,
) -> Result<DifferenceValidation> {
    if n_samples == 0 {
        return Err(invalid_arg("n_samples must be >= 1"));
    }
    let base = TorusPoint::from_reduced(0.2371, 0.6183);
    let n_chunks = n_samples.div_ceil(CHUNK);
    let parts: Vec<(Vec<u64>, Vec<u64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|k| -> Result<(Vec<u64>, Vec<u64>)> {
            let len = CHUNK.min(n_samples - k * CHUNK);
            let mut gd = rng.keyed("separation", k as u64);
            let mut ga = rng.keyed("full-chain", k as u64);
            let mut gb = rng.keyed("reduced-chain", k as u64);
            let mut path = dynamics.new_path();
            let mut ca = vec![0u64; COARSE * COARSE];
            let mut cb = vec![0u64; COARSE * COARSE];
            for _ in 0..len {
                let mut d = Displacement::reduce(gd.random::<f64>() - 0.5, gd.random::<f64>() - 0.5);
                while d.norm_linf() == 0.0 {
                    d = Displacement::reduce(gd.random::<f64>() - 0.5, gd.random::<f64>() - 0.5);
                }
                let full = dynamics.step_state(&TwoPointState::new(base, base.translate(d))?, &mut ga)?;
                ca[coarse_bin(full.separation())] += 1;
                let x = TorusPoint::uniform(&mut gb);
                let red = dynamics.step_pair(&SeparatedPair::new(x, d), &mut path, &mut gb);
                cb[coarse_bin(red.sep)] += 1;
            }
            Ok((ca, cb))
        })
        .collect::<Result<_>>()?;
    let mut counts_full = vec![0u64; COARSE * COARSE];
    let mut counts_reduced = vec![0u64; COARSE * COARSE];
    for (a, b) in parts {
        counts_full.iter_mut().zip(a).for_each(|(s, v)| *s += v);
        counts_reduced.iter_mut().zip(b).for_each(|(s, v)| *s += v);
    }
    let n = n_samples as f64;
    let z: Vec<f64> = counts_full
        .iter()
        .zip(&counts_reduced)
        .map(|(&a, &b)| {
            let pooled = (a + b) as f64 / (2.0 * n);
            let se = (pooled * (1.0 - pooled) * 2.0 / n).sqrt();
            if se > 0.0 {
                (a as f64 - b as f64) / n / se
            } else {
                0.0
            }
        })
        .collect();
    let max_abs_z = z.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(DifferenceValidation {
        n_samples,
        base_point: base.coords(),
        counts_full,
        counts_reduced,
        z,
        max_abs_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Profile;

    #[test]
    fn frozen_dynamics_give_identical_laws() {
        let dynamics = PairDynamics::new(0.0, Profile::Sine, 0.0).unwrap();
        let v = difference_chain_validation(&dynamics, 20_000, &RngStream::new(1, 0)).unwrap();
        assert_eq!(v.counts_full, v.counts_reduced);
        assert!(v.z.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn reduction_holds_for_strong_shear() {
        let dynamics = PairDynamics::new(10.0, Profile::Sine, 0.0).unwrap();
        let v = difference_chain_validation(&dynamics, 100_000, &RngStream::new(2, 0)).unwrap();
        assert!(v.max_abs_z < 4.0, "{}", v.max_abs_z);
    }

    #[test]
    fn minorization_basics() {
        let dynamics = PairDynamics::new(10.0, Profile::Sine, 0.0).unwrap();
        let x = TorusPoint::from_reduced(0.1, 0.1);
        let starts: Vec<TwoPointState> = [1e-3, 1e-2, 0.05]
            .iter()
            .map(|&r| TwoPointState::new(x, x.translate(Displacement::reduce(r, 0.0))).unwrap())
            .collect();
        let rng = RngStream::new(3, 0);
        let far = SeparationSet::LinfAtLeast { r: 0.25 };
        let rep = minorization_estimate(&starts, &dynamics, 20, &far, 2000, &rng).unwrap();
        assert!(rep.alpha_hat > 0.0 && rep.alpha_lower > 0.0);
        let none = minorization_estimate(&starts, &dynamics, 20, &SeparationSet::Empty, 100, &rng).unwrap();
        assert_eq!(none.alpha_hat, 0.0);
        assert!(SeparationSet::Box { d1: [0.0, 0.1], d2: [-0.1, 0.0] }.contains(Displacement::reduce(0.05, -0.05)));
    }
}
