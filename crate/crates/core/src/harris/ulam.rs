//! Ulam discretization of the separation chain and its contraction in the
//! weighted total-variation distance ρ_β.
//!
//! Bins are the `m × m` cells of the separation torus centred on `k/m`; the
//! cell containing zero is removed (the chain never hits the diagonal) and
//! rows are renormalized. States are numbered `c - 1` for linear cell index
//! `c = i2·m + i1 > 0`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LyapunovParams, PairDynamics, PairNoise};
use crate::error::{invalid_arg, Error, Result};
use crate::flow::{Profile, SeparatedPair};
use crate::torus::{Displacement, RngStream, TorusPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamChain {
    pub m: usize,
    pub amplitude: f64,
    pub profile: Profile,
    pub kappa: f64,
    pub noise: PairNoise,
    pub samples_per_bin: usize,
    /// Samples that landed in the removed zero cell.
    pub dropped: u64,
    /// Rows with no kept sample; replaced by a self-loop.
    pub empty_rows: usize,
    #[serde(skip)]
    matrix: Vec<f64>,
}

impl UlamChain {
    /// Wraps an explicit row-stochastic matrix on `m² - 1` states.
    pub fn from_matrix(m: usize, matrix: Vec<f64>) -> Result<Self> {
        let dim = m * m - 1;
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: matrix.len(),
            });
        }
        for row in matrix.chunks_exact(dim) {
            if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid_arg("matrix is not row-stochastic"));
            }
        }
        Ok(UlamChain {
            m,
            amplitude: f64::NAN,
            profile: Profile::Sine,
            kappa: f64::NAN,
            noise: PairNoise::Common,
            samples_per_bin: 0,
            dropped: 0,
            empty_rows: 0,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.m * self.m - 1
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.matrix[i * d..(i + 1) * d]
    }

    /// State index of the cell containing `d`, or `None` for the zero cell.
    pub fn state_of(m: usize, d: Displacement) -> Option<usize> {
        let idx = |v: f64| ((v * m as f64).round() as i64).rem_euclid(m as i64) as usize;
        let c = idx(d.d2) * m + idx(d.d1);
        c.checked_sub(1)
    }

    /// Signed centre of a state's cell.
    pub fn cell_center(&self, state: usize) -> [f64; 2] {
        let c = state + 1;
        let signed = |i: usize| {
            let i = if i >= self.m.div_ceil(2) { i as f64 - self.m as f64 } else { i as f64 };
            i / self.m as f64
        };
        [signed(c % self.m), signed(c / self.m)]
    }

    /// V at every cell centre.
    pub fn v_weights(&self, params: &LyapunovParams) -> Vec<f64> {
        (0..self.dim())
            .map(|s| {
                let c = self.cell_center(s);
                params.v_of_linf(c[0].abs().max(c[1].abs()))
            })
            .collect()
    }

    fn transposed(&self) -> Vec<f64> {
        let d = self.dim();
        let mut t = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                t[j * d + i] = self.matrix[i * d + j];
            }
        }
        t
    }

    /// `μ P` for a row vector μ.
    pub fn apply(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: mu.len(),
            });
        }
        Ok(left_apply(&self.transposed(), mu))
    }

    /// Raw little-endian f64 matrix, row-major, plus a JSON sidecar.
    pub fn write_matrix(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for v in &self.matrix {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        serde_json::to_writer_pretty(File::create(path.with_extension("json"))?, self)?;
        Ok(())
    }
}

/// `μ P` given `Pᵀ` in row-major order: each output entry is a contiguous dot
/// product, so the result does not depend on the thread count.
fn left_apply(pt: &[f64], mu: &[f64]) -> Vec<f64> {
    let d = mu.len();
    pt.par_chunks_exact(d)
        .map(|col| col.iter().zip(mu).map(|(a, b)| a * b).sum())
        .collect()
}

/// Monte Carlo Ulam matrix of one period of the separation chain.
pub fn ulam_build(
    dynamics: &PairDynamics,
    m_bins: usize,
    samples_per_bin: usize,
    rng: &RngStream,
) -> Result<UlamChain> {
    dynamics.validate()?;
    if m_bins < 8 {
        return Err(invalid_arg(format!("m_bins must be >= 8, got {m_bins}")));
    }
    if samples_per_bin < 1000 {
        return Err(invalid_arg("samples_per_bin must be >= 1000"));
    }
    let m = m_bins;
    let dim = m * m - 1;
    let rows: Vec<(Vec<f64>, u64, bool)> = (0..dim)
        .into_par_iter()
        .map(|state| {
            let c = state + 1;
            let (i1, i2) = ((c % m) as f64, (c / m) as f64);
            let mut g = rng.keyed("ulam", state as u64);
            let mut path = dynamics.new_path();
            let mut counts = vec![0u32; dim];
            let mut dropped = 0u64;
            for _ in 0..samples_per_bin {
                let d = Displacement::reduce(
                    (i1 + g.random::<f64>() - 0.5) / m as f64,
                    (i2 + g.random::<f64>() - 0.5) / m as f64,
                );
                let x = TorusPoint::uniform(&mut g);
                let next = dynamics.step_pair(&SeparatedPair::new(x, d), &mut path, &mut g);
                match UlamChain::state_of(m, next.sep) {
                    Some(j) => counts[j] += 1,
                    None => dropped += 1,
                }
            }
            let kept = samples_per_bin as u64 - dropped;
            let row = if kept == 0 {
                let mut r = vec![0.0; dim];
                r[state] = 1.0;
                r
            } else {
                counts.iter().map(|&k| k as f64 / kept as f64).collect()
            };
            (row, dropped, kept == 0)
        })
        .collect();
    let mut matrix = Vec::with_capacity(dim * dim);
    let mut dropped = 0;
    let mut empty_rows = 0;
    for (row, d, empty) in rows {
        matrix.extend(row);
        dropped += d;
        empty_rows += empty as usize;
    }
    Ok(UlamChain {
        m,
        amplitude: dynamics.amplitude,
        profile: dynamics.profile,
        kappa: dynamics.kappa,
        noise: dynamics.noise,
        samples_per_bin,
        dropped,
        empty_rows,
        matrix,
    })
}

/// `Σ (1 + β V) |μ1 - μ2|` over bins.
pub fn rho_beta_distance(mu1: &[f64], mu2: &[f64], v_weights: &[f64], beta: f64) -> Result<f64> {
    if mu1.len() != mu2.len() || mu1.len() != v_weights.len() {
        return Err(invalid_arg(format!(
            "length mismatch: {}, {}, {}",
            mu1.len(),
            mu2.len(),
            v_weights.len()
        )));
    }
    Ok(mu1
        .iter()
        .zip(mu2)
        .zip(v_weights)
        .map(|((a, b), v)| (1.0 + beta * v) * (a - b).abs())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Estimated `|λ₂|`.
    pub lambda2: f64,
    /// `1 - |λ₂|`, clamped to `[0, 1]`.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

const GAP_WINDOW: usize = 100;
const GAP_MAX_ITERATIONS: usize = 10_000;
const GAP_TOL: f64 = 1e-6;

/// `1 - |λ₂|` by power iteration of `μ ↦ μP` on sum-zero vectors. The growth
/// rate is averaged over windows so that complex pairs do not stall it.
pub fn spectral_gap(chain: &UlamChain, rng: &RngStream) -> GapEstimate {
    let pt = chain.transposed();
    let d = chain.dim();
    let mut g = rng.keyed("gap", 0);
    let mut v: Vec<f64> = (0..d).map(|_| g.random::<f64>() - 0.5).collect();
    let project = |v: &mut Vec<f64>| -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        n
    };
    project(&mut v);
    let mut logs = Vec::new();
    let done = |lambda2: f64, iterations: usize, converged: bool| GapEstimate {
        lambda2,
        gap: (1.0 - lambda2).clamp(0.0, 1.0),
        iterations,
        converged,
    };
    for it in 1..=GAP_MAX_ITERATIONS {
        let mut w = left_apply(&pt, &v);
        let n = project(&mut w);
        if !(n > 1e-300) {
            return done(0.0, it, true);
        }
        logs.push(n.ln());
        v = w;
        if it >= 2 * GAP_WINDOW && it % GAP_WINDOW == 0 {
            let avg = |s: &[f64]| (s.iter().sum::<f64>() / s.len() as f64).exp();
            let prev = avg(&logs[it - 2 * GAP_WINDOW..it - GAP_WINDOW]);
            let last = avg(&logs[it - GAP_WINDOW..]);
            if (last - prev).abs() < GAP_TOL {
                return done(last, it, true);
            }
        }
    }
    let tail = &logs[logs.len() - GAP_WINDOW..];
    done((tail.iter().sum::<f64>() / tail.len() as f64).exp(), GAP_MAX_ITERATIONS, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub steps: usize,
    pub beta_weight: f64,
    pub n_pairs: usize,
    /// Largest observed `ρ_β(μ1 P^l, μ2 P^l) / ρ_β(μ1, μ2)`.
    pub alpha_bar_hat: f64,
    pub worst_pair_is_point_mass: bool,
    pub spectral_gap: GapEstimate,
}

/// ρ_β contraction over random measure pairs (half point masses, half
/// four-point mixtures) and the spectral gap.
pub fn contraction_factor(
    chain: &UlamChain,
    params: &LyapunovParams,
    beta_weight: f64,
    steps: usize,
    n_pairs: usize,
    rng: &RngStream,
) -> Result<ContractionReport> {
    if n_pairs < 100 {
        return Err(invalid_arg("contraction needs at least 100 measure pairs"));
    }
    if steps == 0 || !(beta_weight >= 0.0) {
        return Err(invalid_arg("steps must be >= 1 and beta_weight >= 0"));
    }
    let d = chain.dim();
    let pt = chain.transposed();
    let w = chain.v_weights(params);
    let ratios: Vec<(f64, bool)> = (0..n_pairs)
        .map(|k| {
            let mut g = rng.keyed("measure-pair", k as u64);
            let point = k % 2 == 0;
            let draw = |g: &mut RngStream| -> Vec<f64> {
                let mut mu = vec![0.0; d];
                if point {
                    mu[g.random_range(0..d)] = 1.0;
                } else {
                    for _ in 0..4 {
                        mu[g.random_range(0..d)] += g.random::<f64>() + 1e-3;
                    }
                    let s: f64 = mu.iter().sum();
                    mu.iter_mut().for_each(|x| *x /= s);
                }
                mu
            };
            let mut a = draw(&mut g);
            let mut b = draw(&mut g);
            while a == b {
                b = draw(&mut g);
            }
            let before = rho_beta_distance(&a, &b, &w, beta_weight).unwrap();
            for _ in 0..steps {
                a = left_apply(&pt, &a);
                b = left_apply(&pt, &b);
            }
            (rho_beta_distance(&a, &b, &w, beta_weight).unwrap() / before, point)
        })
        .collect();
    let (alpha, point) = ratios
        .into_iter()
        .fold((f64::NEG_INFINITY, true), |acc, r| if r.0 > acc.0 { r } else { acc });
    Ok(ContractionReport {
        steps,
        beta_weight,
        n_pairs,
        alpha_bar_hat: alpha,
        worst_pair_is_point_mass: point,
        spectral_gap: spectral_gap(chain, rng),
    })
}
