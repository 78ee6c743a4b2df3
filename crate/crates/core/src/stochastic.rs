//! Diffusive Lagrangian dynamics over each unit shear interval.
//!
//! During a horizontal shear the cross coordinate `x2` feels no drift, so it
//! is an exact Brownian motion `x2 + √(2κ) W2(t)`. The sheared coordinate
//! picks up `±A ∫₀¹ g(x2(s) - ζ) ds` plus its own Brownian increment. Only
//! the drift integral is approximated (midpoint rule on the substep grid).
//!
//! The noise is additive, so one [`BrownianPath`] moves every initial point:
//! the two-point SDE chain below is a stochastic flow with common noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_state, Result};
use crate::flow::{shear_step, Axis, Profile, SeparatedPair, TwoPointState};
use crate::torus::{wrap_coord, wrapped_gaussian_unchecked, Displacement, TorusPoint};

/// Sign in front of the velocity in the SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSign {
    /// `dX = -u dt + √(2κ) dW`.
    #[default]
    Minus,
    /// `dX = +u dt + √(2κ) dW`; pathwise equal to the deterministic shear
    /// maps at κ = 0.
    Plus,
}

impl DriftSign {
    #[inline]
    pub fn factor(self) -> f64 {
        match self {
            DriftSign::Minus => -1.0,
            DriftSign::Plus => 1.0,
        }
    }
}

pub const DEFAULT_SUBSTEPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub kappa: f64,
    pub substeps: usize,
    #[serde(default)]
    pub drift_sign: DriftSign,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig {
            kappa: 0.0,
            substeps: DEFAULT_SUBSTEPS,
            drift_sign: DriftSign::Minus,
        }
    }
}

impl SdeConfig {
    pub fn new(kappa: f64, substeps: usize, drift_sign: DriftSign) -> Result<Self> {
        let cfg = SdeConfig {
            kappa,
            substeps,
            drift_sign,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_kappa(kappa: f64) -> Result<Self> {
        Self::new(kappa, DEFAULT_SUBSTEPS, DriftSign::Minus)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(invalid_arg(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.substeps == 0 {
            return Err(invalid_arg("substeps must be >= 1"));
        }
        Ok(())
    }

    /// Amplitude with the drift sign folded in.
    #[inline]
    pub fn signed_amplitude(&self, amplitude: f64) -> f64 {
        self.drift_sign.factor() * amplitude
    }
}

/// Standard two-dimensional Brownian motion over one unit interval, sampled
/// on the half-substep grid `t_k = (k+1)/(2n)`, `k = 0..2n`.
///
/// The cross coordinate is needed on the whole grid (its midpoint values
/// feed the drift quadrature). The along coordinate is needed only at `t = 1`
/// unless the running maximum is tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    substeps: usize,
    across: Vec<f64>,
    along: Vec<f64>,
    along_end: f64,
}

impl BrownianPath {
    pub fn zero(substeps: usize) -> Self {
        BrownianPath {
            substeps,
            across: vec![0.0; 2 * substeps],
            along: Vec::new(),
            along_end: 0.0,
        }
    }

    /// Samples the cross coordinate on the grid and the along coordinate at
    /// the end point only.
    pub fn sample<R: Rng + ?Sized>(substeps: usize, rng: &mut R) -> Self {
        let mut p = Self::zero(substeps);
        p.resample(rng);
        p
    }

    /// Samples both coordinates on the full grid, so that
    /// [`running_max`](Self::running_max) is available.
    pub fn sample_full<R: Rng + ?Sized>(substeps: usize, rng: &mut R) -> Self {
        let mut p = Self::zero(substeps);
        let sd = (0.5 / substeps as f64).sqrt();
        fill_walk(&mut p.across, sd, rng);
        p.along = vec![0.0; 2 * substeps];
        fill_walk(&mut p.along, sd, rng);
        p.along_end = *p.along.last().unwrap();
        p
    }

    /// Overwrites the path in place (no reallocation).
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let sd = (0.5 / self.substeps as f64).sqrt();
        fill_walk(&mut self.across, sd, rng);
        self.along.clear();
        self.along_end = rng.sample::<f64, _>(StandardNormal);
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Cross coordinate at the substep midpoints.
    #[inline]
    pub fn across_midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.across.iter().step_by(2).copied()
    }

    #[inline]
    pub fn across_end(&self) -> f64 {
        *self.across.last().unwrap()
    }

    #[inline]
    pub fn along_end(&self) -> f64 {
        self.along_end
    }

    /// `max_t |W_t|` over the grid, or `None` if the along coordinate was
    /// only sampled at the end point.
    pub fn running_max(&self) -> Option<f64> {
        if self.along.is_empty() {
            return None;
        }
        Some(
            self.across
                .iter()
                .zip(&self.along)
                .map(|(a, b)| a.hypot(*b))
                .fold(0.0, f64::max),
        )
    }

    /// The same path seen on a coarser grid with `substeps` steps, which must
    /// divide the current number of steps.
    pub fn coarsen(&self, substeps: usize) -> Result<BrownianPath> {
        if substeps == 0 || !self.substeps.is_multiple_of(substeps) {
            return Err(invalid_arg(format!(
                "cannot coarsen {} substeps to {substeps}",
                self.substeps
            )));
        }
        let r = self.substeps / substeps;
        let pick = |v: &Vec<f64>| -> Vec<f64> {
            if v.is_empty() {
                Vec::new()
            } else {
                (0..2 * substeps).map(|k| v[(k + 1) * r - 1]).collect()
            }
        };
        Ok(BrownianPath {
            substeps,
            across: pick(&self.across),
            along: pick(&self.along),
            along_end: self.along_end,
        })
    }
}

fn fill_walk<R: Rng + ?Sized>(buf: &mut [f64], sd: f64, rng: &mut R) {
    let mut w = 0.0;
    for slot in buf.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        w += sd * z;
        *slot = w;
    }
}

/// One unit interval of shear plus noise along a given Brownian path.
///
/// At κ = 0 this is exactly [`shear_step`] with the signed amplitude.
pub fn sde_unit_step_with_path(
    x: TorusPoint,
    zeta: f64,
    axis: Axis,
    amplitude: f64,
    profile: Profile,
    cfg: &SdeConfig,
    path: &BrownianPath,
) -> TorusPoint {
    let a = cfg.signed_amplitude(amplitude);
    if cfg.kappa == 0.0 {
        return shear_step(x, zeta, axis, a, profile);
    }
    let s = (2.0 * cfg.kappa).sqrt();
    let c = x.coords();
    let (along, across) = (c[axis.along()], c[axis.across()]);
    let drift = a * drift_quadrature(across - zeta, s, path, profile);
    let new_along = wrap_coord(along + drift + s * path.along_end());
    let new_across = wrap_coord(across + s * path.across_end());
    match axis {
        Axis::Horizontal => TorusPoint::from_reduced(new_along, new_across),
        Axis::Vertical => TorusPoint::from_reduced(new_across, new_along),
    }
}

/// `∫₀¹ g(offset + s W(t)) dt` by the midpoint rule.
#[inline]
fn drift_quadrature(offset: f64, s: f64, path: &BrownianPath, profile: Profile) -> f64 {
    let sum: f64 = path
        .across_midpoints()
        .map(|w| profile.value(offset + s * w))
        .sum();
    sum / path.substeps() as f64
}

/// One unit interval of the SDE with a freshly sampled Brownian path.
pub fn sde_unit_step<R: Rng + ?Sized>(
    x: TorusPoint,
    zeta: f64,
    axis: Axis,
    amplitude: f64,
    profile: Profile,
    cfg: &SdeConfig,
    rng: &mut R,
) -> TorusPoint {
    if cfg.kappa == 0.0 {
        return sde_unit_step_with_path(x, zeta, axis, amplitude, profile, cfg, &BrownianPath::zero(1));
    }
    let path = BrownianPath::sample(cfg.substeps, rng);
    sde_unit_step_with_path(x, zeta, axis, amplitude, profile, cfg, &path)
}

/// A full period (horizontal then vertical interval) of the SDE.
pub fn sde_period_step<R: Rng + ?Sized>(
    x: TorusPoint,
    zeta_even: f64,
    zeta_odd: f64,
    amplitude: f64,
    profile: Profile,
    cfg: &SdeConfig,
    rng: &mut R,
) -> TorusPoint {
    let h = sde_unit_step(x, zeta_even, Axis::Horizontal, amplitude, profile, cfg, rng);
    sde_unit_step(h, zeta_odd, Axis::Vertical, amplitude, profile, cfg, rng)
}

/// Pulsed diffusion: shear, periodized Gaussian kick of variance κ, shear,
/// kick.
pub fn pulsed_step<R: Rng + ?Sized>(
    x: TorusPoint,
    zeta_even: f64,
    zeta_odd: f64,
    amplitude: f64,
    profile: Profile,
    kappa: f64,
    rng: &mut R,
) -> Result<TorusPoint> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid_arg(format!("kappa must be >= 0, got {kappa}")));
    }
    let sd = kappa.sqrt();
    let h = shear_step(x, zeta_even, Axis::Horizontal, amplitude, profile);
    let h = h.translate(wrapped_gaussian_unchecked(sd, rng));
    let v = shear_step(h, zeta_odd, Axis::Vertical, amplitude, profile);
    Ok(v.translate(wrapped_gaussian_unchecked(sd, rng)))
}

/// Two-point SDE period: both points see the same Brownian path in each
/// interval; paths are fresh for every call.
pub fn two_point_sde_step<R: Rng + ?Sized>(
    s: &TwoPointState,
    zeta_even: f64,
    zeta_odd: f64,
    amplitude: f64,
    profile: Profile,
    cfg: &SdeConfig,
    rng: &mut R,
) -> Result<TwoPointState> {
    if s.x == s.y {
        return Err(invalid_state("two-point state on the diagonal"));
    }
    let mut path = BrownianPath::zero(cfg.substeps);
    let mut out = *s;
    for (zeta, axis) in [(zeta_even, Axis::Horizontal), (zeta_odd, Axis::Vertical)] {
        if cfg.kappa > 0.0 {
            path.resample(rng);
        }
        out = TwoPointState {
            x: sde_unit_step_with_path(out.x, zeta, axis, amplitude, profile, cfg, &path),
            y: sde_unit_step_with_path(out.y, zeta, axis, amplitude, profile, cfg, &path),
        };
    }
    Ok(out)
}

/// Common-noise SDE interval for a [`SeparatedPair`], computing the change
/// of separation from profile differences so tiny separations stay exact to
/// relative precision.
pub fn sde_pair_unit_step(
    pair: &SeparatedPair,
    zeta: f64,
    axis: Axis,
    amplitude: f64,
    profile: Profile,
    cfg: &SdeConfig,
    path: &BrownianPath,
) -> SeparatedPair {
    let a = cfg.signed_amplitude(amplitude);
    if cfg.kappa == 0.0 {
        return pair.shear(zeta, axis, a, profile);
    }
    let s = (2.0 * cfg.kappa).sqrt();
    let base = sde_unit_step_with_path(pair.base, zeta, axis, amplitude, profile, cfg, path);
    let offset = pair.base.coords()[axis.across()] - zeta;
    let d = pair.sep.as_array();
    let d_across = d[axis.across()];
    let sum: f64 = path
        .across_midpoints()
        .map(|w| profile.difference(offset + s * w, d_across))
        .sum();
    let delta = a * sum / path.substeps() as f64;
    let sep = match axis {
        Axis::Horizontal => Displacement::reduce(d[0] + delta, d[1]),
        Axis::Vertical => Displacement::reduce(d[0], d[1] + delta),
    };
    SeparatedPair { base, sep }
}

/// Pulsed two-point interval with independent kicks for the two points.
pub fn pulsed_pair_unit_step<R: Rng + ?Sized>(
    pair: &SeparatedPair,
    zeta: f64,
    axis: Axis,
    amplitude: f64,
    profile: Profile,
    kappa: f64,
    rng: &mut R,
) -> SeparatedPair {
    let sheared = pair.shear(zeta, axis, amplitude, profile);
    if kappa == 0.0 {
        return sheared;
    }
    let sd = kappa.sqrt();
    let kx = wrapped_gaussian_unchecked(sd, rng);
    let ky = wrapped_gaussian_unchecked(sd, rng);
    SeparatedPair {
        base: sheared.base.translate(kx),
        sep: Displacement::reduce(sheared.sep.d1 + ky.d1 - kx.d1, sheared.sep.d2 + ky.d2 - kx.d2),
    }
}

/// Independent-kick pulsed two-point period.
pub fn pulsed_two_point_step<R: Rng + ?Sized>(
    s: &TwoPointState,
    zeta_even: f64,
    zeta_odd: f64,
    amplitude: f64,
    profile: Profile,
    kappa: f64,
    rng: &mut R,
) -> Result<TwoPointState> {
    if s.x == s.y {
        return Err(invalid_state("two-point state on the diagonal"));
    }
    Ok(TwoPointState {
        x: pulsed_step(s.x, zeta_even, zeta_odd, amplitude, profile, kappa, rng)?,
        y: pulsed_step(s.y, zeta_even, zeta_odd, amplitude, profile, kappa, rng)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{double_step, two_point_step};
    use crate::torus::{displacement, RngStream};

    const PROFILES: [Profile; 2] = [Profile::Sine, Profile::PiecewiseLinear];

    #[test]
    fn zero_kappa_is_the_deterministic_shear() {
        let mut rng = RngStream::new(1, 0);
        for profile in PROFILES {
            for sign in [DriftSign::Plus, DriftSign::Minus] {
                let cfg = SdeConfig::new(0.0, 7, sign).unwrap();
                for _ in 0..500 {
                    let x = TorusPoint::uniform(&mut rng);
                    let z: f64 = rng.random();
                    let a = 1.9;
                    let got = sde_unit_step(x, z, Axis::Vertical, a, profile, &cfg, &mut rng);
                    assert_eq!(got, shear_step(x, z, Axis::Vertical, sign.factor() * a, profile));
                }
            }
        }
    }

    #[test]
    fn zero_kappa_two_point_reduces_exactly() {
        let mut rng = RngStream::new(2, 0);
        let cfg = SdeConfig::new(0.0, 32, DriftSign::Plus).unwrap();
        for _ in 0..500 {
            let s = TwoPointState::new(TorusPoint::uniform(&mut rng), TorusPoint::uniform(&mut rng)).unwrap();
            let (ze, zo) = (rng.random::<f64>(), rng.random::<f64>());
            let a = two_point_sde_step(&s, ze, zo, 3.0, Profile::Sine, &cfg, &mut rng).unwrap();
            let b = two_point_step(&s, ze, zo, 3.0, Profile::Sine).unwrap();
            assert_eq!(a, b);
            let p = pulsed_step(s.x, ze, zo, 3.0, Profile::Sine, 0.0, &mut rng).unwrap();
            assert_eq!(p, double_step(s.x, ze, zo, 3.0, Profile::Sine));
        }
    }

    #[test]
    fn common_noise_preserves_separation_without_drift() {
        let mut rng = RngStream::new(3, 0);
        let cfg = SdeConfig::with_kappa(1e-2).unwrap();
        for _ in 0..1000 {
            let s = TwoPointState::new(TorusPoint::uniform(&mut rng), TorusPoint::uniform(&mut rng)).unwrap();
            let t = two_point_sde_step(&s, 0.3, 0.6, 0.0, Profile::Sine, &cfg, &mut rng).unwrap();
            let (d0, d1) = (s.separation(), t.separation());
            assert!((d0.d1 - d1.d1).abs() < 1e-14 && (d0.d2 - d1.d2).abs() < 1e-14);
        }
    }

    #[test]
    fn both_points_see_identical_increments() {
        let rng = RngStream::new(4, 0);
        let cfg = SdeConfig::new(1e-3, 8, DriftSign::Minus).unwrap();
        let s = TwoPointState::new(TorusPoint::wrap([0.1, 0.2]).unwrap(), TorusPoint::wrap([0.7, 0.4]).unwrap()).unwrap();
        let got = two_point_sde_step(&s, 0.2, 0.9, 1.5, Profile::Sine, &cfg, &mut rng.clone()).unwrap();
        // replay the same draws by hand
        let mut r = rng.clone();
        let mut path = BrownianPath::zero(8);
        path.resample(&mut r);
        let hx = sde_unit_step_with_path(s.x, 0.2, Axis::Horizontal, 1.5, Profile::Sine, &cfg, &path);
        let hy = sde_unit_step_with_path(s.y, 0.2, Axis::Horizontal, 1.5, Profile::Sine, &cfg, &path);
        path.resample(&mut r);
        let vx = sde_unit_step_with_path(hx, 0.9, Axis::Vertical, 1.5, Profile::Sine, &cfg, &path);
        let vy = sde_unit_step_with_path(hy, 0.9, Axis::Vertical, 1.5, Profile::Sine, &cfg, &path);
        assert_eq!(got, TwoPointState { x: vx, y: vy });
    }

    #[test]
    fn separated_pair_sde_matches_point_pair() {
        let mut rng = RngStream::new(5, 0);
        let cfg = SdeConfig::new(1e-3, 16, DriftSign::Plus).unwrap();
        for profile in PROFILES {
            for _ in 0..1000 {
                let x = TorusPoint::uniform(&mut rng);
                let d = Displacement::reduce(rng.random::<f64>() * 0.01, rng.random::<f64>() * 0.01);
                let pair = SeparatedPair::new(x, d);
                let path = BrownianPath::sample(16, &mut rng);
                let z: f64 = rng.random();
                let a = sde_pair_unit_step(&pair, z, Axis::Horizontal, 2.0, profile, &cfg, &path);
                let st = pair.to_state();
                let bx = sde_unit_step_with_path(st.x, z, Axis::Horizontal, 2.0, profile, &cfg, &path);
                let by = sde_unit_step_with_path(st.y, z, Axis::Horizontal, 2.0, profile, &cfg, &path);
                assert_eq!(a.base, bx);
                let db = displacement(&bx, &by);
                assert!((a.sep.d1 - db.d1).abs() < 1e-12 && (a.sep.d2 - db.d2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coarsened_path_is_consistent() {
        let mut rng = RngStream::new(6, 0);
        let fine = BrownianPath::sample_full(64, &mut rng);
        let coarse = fine.coarsen(16).unwrap();
        assert_eq!(coarse.substeps(), 16);
        assert_eq!(coarse.across_end(), fine.across_end());
        assert_eq!(coarse.along_end(), fine.along_end());
        assert!(coarse.running_max().unwrap() <= fine.running_max().unwrap());
        assert_eq!(fine.coarsen(64).unwrap(), fine);
        assert!(fine.coarsen(48).is_err());
        assert!(BrownianPath::sample(8, &mut rng).running_max().is_none());
    }

    #[test]
    fn config_validation() {
        assert!(SdeConfig::new(-1.0, 4, DriftSign::Plus).is_err());
        assert!(SdeConfig::new(1.0, 0, DriftSign::Plus).is_err());
        let mut rng = RngStream::new(0, 0);
        assert!(pulsed_step(TorusPoint::ORIGIN, 0.0, 0.0, 1.0, Profile::Sine, -1.0, &mut rng).is_err());
        let bad = TwoPointState { x: TorusPoint::ORIGIN, y: TorusPoint::ORIGIN };
        assert!(two_point_sde_step(&bad, 0.0, 0.0, 1.0, Profile::Sine, &SdeConfig::default(), &mut rng).is_err());
    }
}
