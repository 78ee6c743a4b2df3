//! Eulerian advection–diffusion of a scalar on an `n × n` collocation grid.
//!
//! Both pieces of the evolution have exact propagators on trigonometric
//! interpolants: a shear translates each grid line rigidly (a phase shift of
//! its Fourier coefficients) and the heat semigroup is diagonal in Fourier
//! space. The only approximation is the operator splitting between them.
//!
//! Layout: `values[j * n + i] = f(i/n, j/n)`, so a row holds a line of fixed
//! `x2`. Horizontal shears act on rows; vertical shears on the transpose.
//!
//! The Nyquist mode of a real line cannot be translated and stay real; it is
//! left in place, which keeps every advection step exactly unitary.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::flow::{Axis, Profile, ShearSchedule};
use crate::torus::TorusPoint;

/// Grid values of a scalar together with its (conserved) mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    n: usize,
    values: Vec<f64>,
    mean: f64,
}

fn check_grid_size(n: usize) -> Result<()> {
    if n < 4 || !n.is_power_of_two() {
        return Err(invalid_arg(format!(
            "grid size must be a power of two >= 4, got {n}"
        )));
    }
    Ok(())
}

impl ScalarField {
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        check_grid_size(n)?;
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid_arg("field values must be finite"));
        }
        let mean = grid_mean(&values);
        Ok(ScalarField { n, values, mean })
    }

    /// Samples `f(x1, x2)` at the collocation points.
    pub fn from_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_grid_size(n)?;
        let h = 1.0 / n as f64;
        let values = (0..n * n)
            .map(|idx| f((idx % n) as f64 * h, (idx / n) as f64 * h))
            .collect();
        Self::from_values(n, values)
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        Self::from_values(n, vec![c; n * n])
    }

    /// Periodized Gaussian probability density of standard deviation `sigma`
    /// per coordinate, centred at `center`, normalized to grid mean 1.
    pub fn gaussian_bump(n: usize, center: TorusPoint, sigma: f64) -> Result<Self> {
        check_grid_size(n)?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid_arg(format!("sigma must be > 0, got {sigma}")));
        }
        let var = sigma * sigma;
        let g1 = periodic_gaussian(n, center.x1(), var);
        let g2 = periodic_gaussian(n, center.x2(), var);
        let mut values = Vec::with_capacity(n * n);
        for b in &g2 {
            values.extend(g1.iter().map(|a| a * b));
        }
        let m = grid_mean(&values);
        values.iter_mut().for_each(|v| *v /= m);
        Self::from_values(n, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at collocation point `(i/n, j/n)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    /// The mean fixed at construction.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// The mean recomputed from the current values.
    pub fn current_mean(&self) -> f64 {
        grid_mean(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Grid L² distance.
    pub fn l2_distance(&self, other: &ScalarField) -> f64 {
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        (s / self.values.len() as f64).sqrt()
    }

    /// `max |f - c|` over the grid.
    pub fn sup_gap(&self, c: f64) -> f64 {
        self.values.iter().map(|v| (v - c).abs()).fold(0.0, f64::max)
    }
}

fn grid_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Periodized 1-D Gaussian of variance `var` on `n` collocation points,
/// normalized to grid mean 1.
fn periodic_gaussian(n: usize, center: f64, var: f64) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let mut g: Vec<f64> = if var < 0.05 {
        (0..n)
            .map(|i| {
                let s = i as f64 * h - center;
                (-8..=8)
                    .map(|m| (-(s - m as f64).powi(2) / (2.0 * var)).exp())
                    .sum::<f64>()
            })
            .collect()
    } else {
        (0..n)
            .map(|i| {
                let s = i as f64 * h - center;
                1.0 + 2.0
                    * (1..=24)
                        .map(|k| {
                            let k = k as f64;
                            (-2.0 * PI * PI * var * k * k).exp() * (2.0 * PI * k * s).cos()
                        })
                        .sum::<f64>()
            })
            .collect()
    };
    let m = grid_mean(&g);
    g.iter_mut().for_each(|v| *v /= m);
    g
}

/// Grid inner product `⟨f, g⟩ = n⁻² Σ f g`.
pub fn inner_product(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    if f.n != g.n {
        return Err(Error::DimensionMismatch {
            expected: f.n,
            got: g.n,
        });
    }
    Ok(f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>() / (f.n * f.n) as f64)
}

/// Time splitting of one unit shear interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Splitting {
    /// diffuse h/2, advect h, diffuse h/2, repeated over `substeps` of size
    /// `h = 1/substeps`.
    Strang { substeps: usize },
    /// advect h, then diffuse h.
    Lie { substeps: usize },
    /// Pulsed diffusion: the full shear, then a Gaussian kick of variance κ
    /// (heat flow for time 1/2).
    Pulsed,
}

impl Default for Splitting {
    fn default() -> Self {
        Splitting::Strang { substeps: 1 }
    }
}

impl Splitting {
    pub fn validate(self) -> Result<()> {
        match self {
            Splitting::Strang { substeps } | Splitting::Lie { substeps } if substeps == 0 => {
                Err(invalid_arg("split substeps must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Heat-flow time applied per period (two unit intervals).
    pub fn heat_time_per_period(self) -> f64 {
        match self {
            Splitting::Pulsed => 1.0,
            _ => 2.0,
        }
    }
}

/// Smallest admissible grid size for a run: `4 (A + 1) / √κ`, or 256 when
/// κ = 0.
pub fn required_resolution(amplitude: f64, kappa: f64) -> usize {
    if kappa > 0.0 {
        (4.0 * (amplitude.abs() + 1.0) / kappa.sqrt()).ceil() as usize
    } else {
        256
    }
}

pub fn is_resolved(n: usize, amplitude: f64, kappa: f64) -> bool {
    n >= required_resolution(amplitude, kappa)
}

/// The smallest power of two that is both `>= n_min` and resolved.
pub fn resolved_grid(n_min: usize, amplitude: f64, kappa: f64) -> usize {
    n_min.max(required_resolution(amplitude, kappa)).max(4).next_power_of_two()
}

/// FFT plans for one grid size. Cheap to clone; plans are shared.
#[derive(Clone)]
pub struct SpectralSolver {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralSolver").field("n", &self.n).finish()
    }
}

impl SpectralSolver {
    pub fn new(n: usize) -> Result<Self> {
        check_grid_size(n)?;
        let mut planner = FftPlanner::new();
        Ok(SpectralSolver {
            n,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn check(&self, f: &ScalarField) -> Result<()> {
        if f.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: f.n,
            });
        }
        Ok(())
    }

    /// Translates every line along `axis` by `A g(coord - ζ)`.
    pub fn advect_shear_exact(
        &self,
        f: &mut ScalarField,
        zeta: f64,
        axis: Axis,
        amplitude: f64,
        profile: Profile,
    ) -> Result<()> {
        self.check(f)?;
        let shifts = self.line_shifts(zeta, amplitude, profile, 1.0);
        self.axis_pass(&mut f.values, axis, Some(&shifts), 0.0);
        Ok(())
    }

    /// Exact heat flow: mode `k` is multiplied by `exp(-4π²κ|k|²t)`.
    pub fn diffuse_exact(&self, f: &mut ScalarField, kappa: f64, t: f64) -> Result<()> {
        self.check(f)?;
        if !(kappa >= 0.0 && kappa.is_finite()) || !(t >= 0.0 && t.is_finite()) {
            return Err(invalid_arg(format!(
                "kappa and t must be >= 0, got kappa={kappa}, t={t}"
            )));
        }
        let c = 4.0 * PI * PI * kappa * t;
        if c > 0.0 {
            self.axis_pass(&mut f.values, Axis::Horizontal, None, c);
            self.axis_pass(&mut f.values, Axis::Vertical, None, c);
        }
        Ok(())
    }

    /// One period: horizontal shear with `ζ_even`, then vertical with `ζ_odd`,
    /// each interval split against diffusion as requested.
    #[allow(clippy::too_many_arguments)]
    pub fn period_step(
        &self,
        f: &mut ScalarField,
        zeta_even: f64,
        zeta_odd: f64,
        kappa: f64,
        amplitude: f64,
        profile: Profile,
        splitting: Splitting,
    ) -> Result<()> {
        self.check(f)?;
        splitting.validate()?;
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(invalid_arg(format!("kappa must be >= 0, got {kappa}")));
        }
        let mut pending = 0.0;
        for (zeta, axis) in [(zeta_even, Axis::Horizontal), (zeta_odd, Axis::Vertical)] {
            let (steps, pre, post) = match splitting {
                Splitting::Strang { substeps } => {
                    (substeps, 0.5 / substeps as f64, 0.5 / substeps as f64)
                }
                Splitting::Lie { substeps } => (substeps, 0.0, 1.0 / substeps as f64),
                Splitting::Pulsed => (1, 0.0, 0.5),
            };
            let shifts = self.line_shifts(zeta, amplitude, profile, 1.0 / steps as f64);
            for _ in 0..steps {
                pending += pre;
                self.advect_after_heat(&mut f.values, axis, &shifts, kappa * pending);
                pending = post;
            }
        }
        self.diffuse_exact(f, kappa, pending)
    }

    /// One pulsed-diffusion period: shear, kick, shear, kick.
    pub fn pulsed_period_step(
        &self,
        f: &mut ScalarField,
        zeta_even: f64,
        zeta_odd: f64,
        kappa: f64,
        amplitude: f64,
        profile: Profile,
    ) -> Result<()> {
        self.period_step(f, zeta_even, zeta_odd, kappa, amplitude, profile, Splitting::Pulsed)
    }

    /// Fourier coefficients `f̂(k)` normalized by `n⁻²`, stored at
    /// `[k2 mod n][k1 mod n]`.
    pub fn spectrum(&self, f: &ScalarField) -> Result<Vec<Complex64>> {
        self.check(f)?;
        let n = self.n;
        let mut c: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        self.fft.process_with_scratch(&mut c, &mut scratch);
        transpose(&mut c, n);
        self.fft.process_with_scratch(&mut c, &mut scratch);
        transpose(&mut c, n);
        let s = 1.0 / (n * n) as f64;
        c.iter_mut().for_each(|z| *z *= s);
        Ok(c)
    }

    /// `Σ_k f̂(k) conj(ĝ(k))`, equal to the grid inner product by Parseval.
    pub fn spectral_inner_product(&self, f: &ScalarField, g: &ScalarField) -> Result<f64> {
        let a = self.spectrum(f)?;
        let b = self.spectrum(g)?;
        Ok(a.iter().zip(&b).map(|(x, y)| (x * y.conj()).re).sum())
    }

    /// L¹, L², L∞ of `f - mean` on the grid and the H^s norms (weights
    /// `(1 + 4π²|k|²)^{s/2}`, mean mode excluded) for each `s` in `orders`.
    pub fn norms(&self, f: &ScalarField, orders: &[f64]) -> Result<Norms> {
        self.check(f)?;
        let m = f.mean;
        let len = f.values.len() as f64;
        let l1 = f.values.iter().map(|v| (v - m).abs()).sum::<f64>() / len;
        let l2 = (f.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / len).sqrt();
        let linf = f.sup_gap(m);
        let sobolev = if orders.is_empty() {
            Vec::new()
        } else {
            let spec = self.spectrum(f)?;
            let n = self.n;
            let signed = |i: usize| -> f64 {
                if i <= n / 2 {
                    i as f64
                } else {
                    i as f64 - n as f64
                }
            };
            orders
                .iter()
                .map(|&s| {
                    let mut acc = 0.0;
                    for (idx, z) in spec.iter().enumerate().skip(1) {
                        let (k1, k2) = (signed(idx % n), signed(idx / n));
                        let w = 1.0 + 4.0 * PI * PI * (k1 * k1 + k2 * k2);
                        acc += w.powf(s) * z.norm_sqr();
                    }
                    acc.sqrt()
                })
                .collect()
        };
        Ok(Norms {
            l1,
            l2,
            linf,
            sobolev,
        })
    }

    fn line_shifts(&self, zeta: f64, amplitude: f64, profile: Profile, frac: f64) -> Vec<f64> {
        let h = 1.0 / self.n as f64;
        (0..self.n)
            .map(|j| frac * amplitude * profile.value(j as f64 * h - zeta))
            .collect()
    }

    /// Heat flow for time-κ-product `kt` followed by the shear along `axis`.
    /// Diffusion along the shear commutes with it and is fused into the same
    /// line transforms.
    fn advect_after_heat(&self, data: &mut [f64], axis: Axis, shifts: &[f64], kt: f64) {
        let c = 4.0 * PI * PI * kt;
        if c > 0.0 {
            let across = match axis {
                Axis::Horizontal => Axis::Vertical,
                Axis::Vertical => Axis::Horizontal,
            };
            self.axis_pass(data, across, None, c);
        }
        self.axis_pass(data, axis, Some(shifts), c);
    }

    fn axis_pass(&self, data: &mut [f64], axis: Axis, shifts: Option<&[f64]>, heat: f64) {
        match axis {
            Axis::Horizontal => self.line_pass(data, shifts, heat),
            Axis::Vertical => {
                transpose(data, self.n);
                self.line_pass(data, shifts, heat);
                transpose(data, self.n);
            }
        }
    }

    /// Applies to every row `r` the Fourier multiplier
    /// `exp(-heat·k²) · e^{-2πik·shifts[r]}`. Two real rows share one complex
    /// transform.
    fn line_pass(&self, data: &mut [f64], shifts: Option<&[f64]>, heat: f64) {
        let n = self.n;
        let half = n / 2;
        let damp: Vec<f64> = (0..=half).map(|k| (-heat * (k * k) as f64).exp()).collect();
        let mut buf = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        let mut px = vec![Complex64::default(); half + 1];
        let mut py = vec![Complex64::default(); half + 1];
        let inv_n = 1.0 / n as f64;
        let i_half = Complex64::new(0.0, -0.5);
        let i_unit = Complex64::new(0.0, 1.0);
        for (pair_idx, pair) in data.chunks_exact_mut(2 * n).enumerate() {
            let (r0, r1) = pair.split_at_mut(n);
            for (b, (a, c)) in buf.iter_mut().zip(r0.iter().zip(r1.iter())) {
                *b = Complex64::new(*a, *c);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            match shifts {
                None => {
                    for (k, z) in buf.iter_mut().enumerate() {
                        *z *= damp[k.min(n - k)];
                    }
                }
                Some(s) => {
                    phases(s[2 * pair_idx], &mut px);
                    phases(s[2 * pair_idx + 1], &mut py);
                    px[half] = Complex64::new(1.0, 0.0);
                    py[half] = Complex64::new(1.0, 0.0);
                    for k in 0..=half {
                        let m = (n - k) % n;
                        let zk = buf[k];
                        let zm = buf[m].conj();
                        let x = (zk + zm) * 0.5 * px[k] * damp[k];
                        let y = (zk - zm) * i_half * py[k] * damp[k];
                        buf[k] = x + i_unit * y;
                        if m != k {
                            buf[m] = x.conj() + i_unit * y.conj();
                        }
                    }
                }
            }
            self.ifft.process_with_scratch(&mut buf, &mut scratch);
            for (b, (a, c)) in buf.iter().zip(r0.iter_mut().zip(r1.iter_mut())) {
                *a = b.re * inv_n;
                *c = b.im * inv_n;
            }
        }
    }
}

/// `out[k] = e^{-2πik a}` by complex recurrence, resynchronized every 32
/// steps.
fn phases(a: f64, out: &mut [Complex64]) {
    let w = Complex64::from_polar(1.0, -2.0 * PI * a);
    let mut z = Complex64::new(1.0, 0.0);
    for (k, o) in out.iter_mut().enumerate() {
        if k % 32 == 0 {
            z = Complex64::from_polar(1.0, -2.0 * PI * a * k as f64);
        }
        *o = z;
        z *= w;
    }
}

fn transpose<T: Copy>(a: &mut [T], n: usize) {
    const B: usize = 32;
    for ib in (0..n).step_by(B) {
        for jb in (ib..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                for j in jb.max(i + 1)..(jb + B).min(n) {
                    a.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

/// Norms of one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub sobolev: Vec<f64>,
}

/// Norms recorded over time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormSeries {
    pub times: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub linf: Vec<f64>,
    pub sobolev_orders: Vec<f64>,
    /// One series per Sobolev order.
    pub sobolev: Vec<Vec<f64>>,
}

impl NormSeries {
    pub fn new(sobolev_orders: &[f64]) -> Self {
        NormSeries {
            sobolev_orders: sobolev_orders.to_vec(),
            sobolev: vec![Vec::new(); sobolev_orders.len()],
            ..Default::default()
        }
    }

    pub fn push(&mut self, t: f64, norms: &Norms) {
        self.times.push(t);
        self.l1.push(norms.l1);
        self.l2.push(norms.l2);
        self.linf.push(norms.linf);
        for (s, v) in self.sobolev.iter_mut().zip(&norms.sobolev) {
            s.push(*v);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,l1,l2,linf")?;
        for s in &self.sobolev_orders {
            write!(w, ",h_{s}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(
                w,
                "{},{:e},{:e},{:e}",
                self.times[i], self.l1[i], self.l2[i], self.linf[i]
            )?;
            for s in &self.sobolev {
                write!(w, ",{:e}", s[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Norm history of a decay run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRun {
    pub series: NormSeries,
    /// The grid is coarser than the resolution rule asks for.
    pub under_resolved: bool,
}

/// Evolves `rho0` under the schedule for `n_periods` periods, recording norms
/// at every period boundary (time `2p`).
pub fn decay_run(
    solver: &SpectralSolver,
    rho0: &ScalarField,
    schedule: &ShearSchedule,
    kappa: f64,
    n_periods: usize,
    splitting: Splitting,
    sobolev_orders: &[f64],
) -> Result<(DecayRun, ScalarField)> {
    if n_periods == 0 {
        return Err(invalid_arg("n_periods must be >= 1"));
    }
    let mut f = rho0.clone();
    let mut series = NormSeries::new(sobolev_orders);
    series.push(0.0, &solver.norms(&f, sobolev_orders)?);
    for (p, (ze, zo)) in schedule.shift_pairs(n_periods).into_iter().enumerate() {
        solver.period_step(&mut f, ze, zo, kappa, schedule.amplitude, schedule.profile, splitting)?;
        series.push(2.0 * (p + 1) as f64, &solver.norms(&f, sobolev_orders)?);
    }
    Ok((
        DecayRun {
            series,
            under_resolved: !is_resolved(solver.n, schedule.amplitude, kappa),
        },
        f,
    ))
}

/// Width of the narrow Gaussian standing in for a point mass.
pub fn surrogate_sigma(n: usize, kappa: f64) -> f64 {
    (2.0 / n as f64).max(kappa.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingOptions {
    pub epsilon: f64,
    /// Give up after this many periods.
    pub max_periods: usize,
    pub splitting: Splitting,
    /// Sources sit on a `k × k` grid of points `(a/k, b/k)`.
    pub sources_per_side: usize,
}

impl Default for MixingOptions {
    fn default() -> Self {
        MixingOptions {
            epsilon: 0.1,
            max_periods: 2000,
            splitting: Splitting::default(),
            sources_per_side: 4,
        }
    }
}

/// Outcome of a mixing-time run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingResult {
    /// First period at which every source is within ε of uniform; `None` if
    /// that did not happen within the period budget.
    pub t_mix: Option<usize>,
    /// `max_sources max_grid |p - 1|` after each period, starting at period 0.
    pub sup_gap: Vec<f64>,
    pub sigma: f64,
    pub n: usize,
    pub under_resolved: bool,
}

/// Uniform mixing time from a grid of point-mass surrogates.
///
/// With zero amplitude all sources are translates of each other and the
/// density stays an exact periodized Gaussian, so the gap is evaluated in
/// closed form.
pub fn mixing_time(
    solver: &SpectralSolver,
    kappa: f64,
    schedule: &ShearSchedule,
    opts: &MixingOptions,
) -> Result<MixingResult> {
    if !(opts.epsilon > 0.0) {
        return Err(invalid_arg(format!("epsilon must be > 0, got {}", opts.epsilon)));
    }
    if opts.sources_per_side == 0 {
        return Err(invalid_arg("sources_per_side must be >= 1"));
    }
    opts.splitting.validate()?;
    let n = solver.n;
    let sigma = surrogate_sigma(n, kappa);
    let under_resolved = !is_resolved(n, schedule.amplitude, kappa);
    let mut sup_gap = Vec::new();
    let mut t_mix = None;

    if schedule.amplitude == 0.0 {
        let per_period = 2.0 * kappa * opts.splitting.heat_time_per_period();
        for p in 0..=opts.max_periods {
            let g = periodic_gaussian(n, 0.0, sigma * sigma + per_period * p as f64);
            let (lo, hi) = g.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let gap = (hi * hi - 1.0).max(1.0 - lo * lo);
            sup_gap.push(gap);
            if gap < opts.epsilon {
                t_mix = Some(p);
                break;
            }
        }
    } else {
        let k = opts.sources_per_side;
        let mut fields = (0..k * k)
            .map(|s| {
                let c = TorusPoint::from_reduced((s % k) as f64 / k as f64, (s / k) as f64 / k as f64);
                ScalarField::gaussian_bump(n, c, sigma)
            })
            .collect::<Result<Vec<_>>>()?;
        let shifts = schedule.shift_pairs(opts.max_periods);
        for p in 0..=opts.max_periods {
            if p > 0 {
                let (ze, zo) = shifts[p - 1];
                fields.par_iter_mut().try_for_each(|f| {
                    solver.period_step(f, ze, zo, kappa, schedule.amplitude, schedule.profile, opts.splitting)
                })?;
            }
            let gaps: Vec<f64> = fields.par_iter().map(|f| f.sup_gap(1.0)).collect();
            let gap = gaps.into_iter().fold(0.0, f64::max);
            sup_gap.push(gap);
            if gap < opts.epsilon {
                t_mix = Some(p);
                break;
            }
        }
    }
    Ok(MixingResult {
        t_mix,
        sup_gap,
        sigma,
        n,
        under_resolved,
    })
}

/// Sidecar metadata of an exported field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub n: usize,
    pub time: f64,
    pub kappa: f64,
    pub seed: u64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the values as little-endian f64, row-major, plus a JSON sidecar
/// next to it (same stem, `.json`).
pub fn write_field(path: &Path, f: &ScalarField, meta: &FieldMeta) -> Result<()> {
    if meta.n != f.n {
        return Err(Error::DimensionMismatch {
            expected: f.n,
            got: meta.n,
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    for v in &f.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let side = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(side, meta)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(ScalarField, FieldMeta)> {
    let meta: FieldMeta = serde_json::from_reader(File::open(sidecar_path(path))?)?;
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != meta.n * meta.n * 8 {
        return Err(Error::DimensionMismatch {
            expected: meta.n * meta.n * 8,
            got: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((ScalarField::from_values(meta.n, values)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::RngStream;
    use rand::Rng;

    const TAU: f64 = 2.0 * PI;

    fn random_trig(n: usize, kmax: i32, seed: u64) -> ScalarField {
        let mut rng = RngStream::new(seed, 0);
        let mut terms = Vec::new();
        for k1 in -kmax..=kmax {
            for k2 in -kmax..=kmax {
                terms.push((k1 as f64, k2 as f64, rng.random::<f64>() - 0.5, rng.random::<f64>() * TAU));
            }
        }
        ScalarField::from_fn(n, |x, y| {
            terms
                .iter()
                .map(|(a, b, c, ph)| c * (TAU * (a * x + b * y) + ph).cos())
                .sum()
        })
        .unwrap()
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let s = SpectralSolver::new(64).unwrap();
        let f0 = random_trig(64, 5, 1);
        let mut f = f0.clone();
        s.advect_shear_exact(&mut f, 0.3, Axis::Horizontal, 0.0, Profile::Sine).unwrap();
        s.advect_shear_exact(&mut f, 0.3, Axis::Vertical, 0.0, Profile::Sine).unwrap();
        assert!(f.max_abs_diff(&f0) <= 1e-13);
    }

    #[test]
    fn shear_matches_composed_cosine() {
        let n = 256;
        let s = SpectralSolver::new(n).unwrap();
        for (a, zeta) in [(1.0, 0.13), (0.5, 0.71), (0.25, 0.0)] {
            let mut f = ScalarField::from_fn(n, |x, _| (TAU * x).cos()).unwrap();
            s.advect_shear_exact(&mut f, zeta, Axis::Horizontal, a, Profile::Sine).unwrap();
            let want = ScalarField::from_fn(n, |x, y| (TAU * (x - a * (TAU * (y - zeta)).sin())).cos()).unwrap();
            assert!(f.max_abs_diff(&want) <= 1e-10, "{}", f.max_abs_diff(&want));

            let mut g = ScalarField::from_fn(n, |_, y| (TAU * y).cos()).unwrap();
            s.advect_shear_exact(&mut g, zeta, Axis::Vertical, a, Profile::Sine).unwrap();
            let want = ScalarField::from_fn(n, |x, y| (TAU * (y - a * (TAU * (x - zeta)).sin())).cos()).unwrap();
            assert!(g.max_abs_diff(&want) <= 1e-10);
        }
    }

    #[test]
    fn grid_aligned_shift_is_a_roll() {
        let n = 32;
        let s = SpectralSolver::new(n).unwrap();
        let mut rng = RngStream::new(9, 0);
        let vals: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let f0 = ScalarField::from_values(n, vals).unwrap();
        // shifts of an even number of cells are exact index rolls (the Nyquist
        // phase is then 1)
        let shifts: Vec<f64> = (0..n).map(|j| (j as f64 * 6.0 - 14.0) / n as f64).collect();
        let mut v = f0.values.clone();
        s.line_pass(&mut v, Some(&shifts), 0.0);
        for j in 0..n {
            let m = (j as i64 * 6 - 14).rem_euclid(n as i64) as usize;
            for i in 0..n {
                let want = f0.values[j * n + (i + n - m) % n];
                assert!((v[j * n + i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn advection_preserves_l2_and_mean() {
        let n = 128;
        let s = SpectralSolver::new(n).unwrap();
        let f0 = random_trig(n, 20, 2);
        let n0 = s.norms(&f0, &[]).unwrap();
        let mut f = f0.clone();
        for profile in [Profile::Sine, Profile::PiecewiseLinear] {
            s.advect_shear_exact(&mut f, 0.37, Axis::Horizontal, 2.3, profile).unwrap();
            s.advect_shear_exact(&mut f, 0.81, Axis::Vertical, 2.3, profile).unwrap();
        }
        let n1 = s.norms(&f, &[]).unwrap();
        assert!((n0.l2 - n1.l2).abs() <= 1e-12 * n0.l2.max(1.0));
        assert!((f.current_mean() - f0.current_mean()).abs() <= 1e-12);
    }

    #[test]
    fn heat_factor_on_single_mode() {
        let n = 64;
        let s = SpectralSolver::new(n).unwrap();
        let mut f = ScalarField::from_fn(n, |x, _| (TAU * x).sin()).unwrap();
        s.diffuse_exact(&mut f, 0.01, 1.0).unwrap();
        let factor = (-0.04 * PI * PI).exp();
        let want = ScalarField::from_fn(n, |x, _| factor * (TAU * x).sin()).unwrap();
        assert!(f.max_abs_diff(&want) < 1e-13);

        let g0 = random_trig(n, 3, 4);
        let mut g = g0.clone();
        s.diffuse_exact(&mut g, 0.0, 5.0).unwrap();
        assert_eq!(g, g0);
        assert!(s.diffuse_exact(&mut g, -1.0, 1.0).is_err());
    }

    #[test]
    fn heat_on_gaussian_is_wider_gaussian() {
        let n = 256;
        let s = SpectralSolver::new(n).unwrap();
        let c = TorusPoint::from_reduced(0.3, 0.6);
        let (sigma, kappa, t) = (0.02, 1e-3, 0.7);
        let mut f = ScalarField::gaussian_bump(n, c, sigma).unwrap();
        s.diffuse_exact(&mut f, kappa, t).unwrap();
        let want = ScalarField::gaussian_bump(n, c, (sigma * sigma + 2.0 * kappa * t).sqrt()).unwrap();
        let l1: f64 = f.values.iter().zip(&want.values).map(|(a, b)| (a - b).abs()).sum::<f64>() / (n * n) as f64;
        assert!(l1 <= 1e-8, "{l1}");
    }

    #[test]
    fn pulsed_equals_lie_at_half_kappa() {
        let n = 64;
        let s = SpectralSolver::new(n).unwrap();
        let f0 = random_trig(n, 6, 5);
        let mut a = f0.clone();
        let mut b = f0.clone();
        s.pulsed_period_step(&mut a, 0.2, 0.7, 2e-3, 1.1, Profile::Sine).unwrap();
        s.period_step(&mut b, 0.2, 0.7, 1e-3, 1.1, Profile::Sine, Splitting::Lie { substeps: 1 }).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn period_step_contracts_and_conserves_mean() {
        let n = 64;
        let s = SpectralSolver::new(n).unwrap();
        let mut f = random_trig(n, 8, 6);
        let m0 = f.current_mean();
        let mut l2 = s.norms(&f, &[]).unwrap().l2;
        for kappa in [0.0, 1e-4, 1e-2] {
            for split in [Splitting::Strang { substeps: 3 }, Splitting::Lie { substeps: 2 }, Splitting::Pulsed] {
                s.period_step(&mut f, 0.4, 0.9, kappa, 0.8, Profile::Sine, split).unwrap();
                let l = s.norms(&f, &[]).unwrap().l2;
                assert!(l <= l2 * (1.0 + 1e-12));
                l2 = l;
            }
        }
        assert!((f.current_mean() - m0).abs() <= 1e-12);
        assert!(s.period_step(&mut f, 0.0, 0.0, 0.1, 1.0, Profile::Sine, Splitting::Strang { substeps: 0 }).is_err());
    }

    #[test]
    fn norm_closed_forms() {
        let n = 256;
        let s = SpectralSolver::new(n).unwrap();
        let f = ScalarField::from_fn(n, |x, _| (TAU * x).sin()).unwrap();
        let nm = s.norms(&f, &[0.0, -1.0]).unwrap();
        assert!((nm.l2 - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((nm.linf - 1.0).abs() < 1e-6);
        // grid quadrature of |sin| has an O(n^-2) kink error: exact discrete
        // value is 2 cot(π/n) / n
        assert!((nm.l1 - 2.0 / (PI / n as f64).tan() / n as f64).abs() < 1e-12);
        assert!((nm.l1 - 2.0 / PI).abs() < 1e-4);
        assert!((nm.sobolev[0] - nm.l2).abs() < 1e-12);
        let want = (1.0 + 4.0 * PI * PI).powf(-0.5) / 2f64.sqrt();
        assert!((nm.sobolev[1] - want).abs() < 1e-10);
    }

    #[test]
    fn parseval_inner_product() {
        let n = 64;
        let s = SpectralSolver::new(n).unwrap();
        let f = random_trig(n, 10, 7);
        let g = random_trig(n, 10, 8);
        let a = inner_product(&f, &g).unwrap();
        let b = s.spectral_inner_product(&f, &g).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn closed_form_gap_matches_simulation() {
        let n = 64;
        let s = SpectralSolver::new(n).unwrap();
        let kappa = 2e-3;
        let opts = MixingOptions {
            epsilon: 0.05,
            max_periods: 400,
            ..Default::default()
        };
        let sched = ShearSchedule::new(0.0, Profile::Sine, RngStream::new(0, 0));
        let fast = mixing_time(&s, kappa, &sched, &opts).unwrap();
        let sigma = surrogate_sigma(n, kappa);
        let mut f = ScalarField::gaussian_bump(n, TorusPoint::from_reduced(0.25, 0.5), sigma).unwrap();
        for p in 0..fast.sup_gap.len() {
            assert!((f.sup_gap(1.0) - fast.sup_gap[p]).abs() < 1e-10, "period {p}");
            s.period_step(&mut f, 0.0, 0.0, kappa, 0.0, Profile::Sine, opts.splitting).unwrap();
        }
        assert!(fast.t_mix.is_some());
    }

    #[test]
    fn transpose_roundtrip() {
        let n = 64;
        let mut a: Vec<usize> = (0..n * n).collect();
        transpose(&mut a, n);
        assert_eq!(a[3 * n + 5], 5 * n + 3);
        transpose(&mut a, n);
        assert!(a.iter().enumerate().all(|(i, v)| i == *v));
    }

    #[test]
    fn field_export_roundtrip() {
        let dir = std::env::temp_dir().join(format!("shearmix-field-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("rho.bin");
        let f = random_trig(16, 2, 3);
        let meta = FieldMeta { n: 16, time: 4.0, kappa: 1e-3, seed: 11 };
        write_field(&p, &f, &meta).unwrap();
        let (g, m) = read_field(&p).unwrap();
        assert_eq!(g, f);
        assert_eq!(m, meta);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn resolution_rule() {
        assert_eq!(required_resolution(0.5, 1e-4), 600);
        assert_eq!(resolved_grid(512, 0.5, 1e-4), 1024);
        assert_eq!(resolved_grid(512, 0.5, 1e-2), 512);
        assert!(!is_resolved(128, 0.5, 1e-3));
        assert_eq!(required_resolution(3.0, 0.0), 256);
    }

    #[test]
    fn csv_header() {
        let mut s = NormSeries::new(&[1.0, -1.0]);
        s.push(0.0, &Norms { l1: 1.0, l2: 1.0, linf: 1.0, sobolev: vec![2.0, 0.5] });
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("t,l1,l2,linf,h_1,h_-1\n"));
    }
}
