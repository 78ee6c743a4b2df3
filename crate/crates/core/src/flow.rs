//! Exact flow maps of the randomly shifted alternating shear.
//!
//! On `[2n, 2n+1)` the velocity is `A g(x2 - ζ_{2n}) e1`, on `[2n+1, 2n+2)` it
//! is `A g(x1 - ζ_{2n+1}) e2`. A shear is constant along its streamlines, so
//! the time-one map of each half period is an exact translation of every
//! streamline and no time integration is needed.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_state, Result};
use crate::stats::mean_ci;
use crate::torus::{displacement, wrap_coord, Displacement, RngStream, TorusPoint};

/// Shear profile `g`, 1-periodic with unit amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Sine,
    /// Triangle wave with the phase of `sin(2π·)`: zero at 0, peak at 1/4,
    /// trough at 3/4, slope ±4.
    PiecewiseLinear,
}

impl Profile {
    #[inline]
    pub fn value(self, s: f64) -> f64 {
        match self {
            Profile::Sine => (TAU * s).sin(),
            Profile::PiecewiseLinear => {
                let t = wrap_coord(s + 0.25);
                1.0 - (2.0 - 4.0 * t).abs()
            }
        }
    }

    /// `g'(s)`. At the kinks of the triangle wave this is the left
    /// derivative.
    #[inline]
    pub fn slope(self, s: f64) -> f64 {
        match self {
            Profile::Sine => TAU * (TAU * s).cos(),
            Profile::PiecewiseLinear => {
                let t = wrap_coord(s + 0.25);
                if t > 0.0 && t <= 0.5 {
                    4.0
                } else {
                    -4.0
                }
            }
        }
    }

    /// `sup |g'|`.
    pub fn max_slope(self) -> f64 {
        match self {
            Profile::Sine => TAU,
            Profile::PiecewiseLinear => 4.0,
        }
    }

    /// `sup |g''|`, infinite for the triangle wave.
    pub fn max_curvature(self) -> f64 {
        match self {
            Profile::Sine => TAU * TAU,
            Profile::PiecewiseLinear => f64::INFINITY,
        }
    }

    /// `g(s + d) - g(s)` without cancellation for small `d`.
    #[inline]
    pub fn difference(self, s: f64, d: f64) -> f64 {
        match self {
            Profile::Sine => 2.0 * (TAU * s + PI * d).cos() * (PI * d).sin(),
            Profile::PiecewiseLinear => {
                let t = wrap_coord(s + 0.25);
                let u = t + d;
                let same_rising = t < 0.5 && (0.0..0.5).contains(&u);
                let same_falling = t >= 0.5 && (0.5..1.0).contains(&u);
                if same_rising {
                    4.0 * d
                } else if same_falling {
                    -4.0 * d
                } else {
                    self.value(s + d) - self.value(s)
                }
            }
        }
    }
}

/// Direction of the shear: `Horizontal` moves `x1` by a function of `x2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl Axis {
    /// Index of the coordinate that moves.
    #[inline]
    pub fn along(self) -> usize {
        match self {
            Axis::Horizontal => 0,
            Axis::Vertical => 1,
        }
    }

    /// Index of the coordinate the displacement depends on.
    #[inline]
    pub fn across(self) -> usize {
        1 - self.along()
    }
}

/// Exact unit-time map of one shear.
#[inline]
pub fn shear_step(x: TorusPoint, zeta: f64, axis: Axis, amplitude: f64, profile: Profile) -> TorusPoint {
    let [x1, x2] = x.coords();
    match axis {
        Axis::Horizontal => {
            TorusPoint::from_reduced(wrap_coord(x1 + amplitude * profile.value(x2 - zeta)), x2)
        }
        Axis::Vertical => {
            TorusPoint::from_reduced(x1, wrap_coord(x2 + amplitude * profile.value(x1 - zeta)))
        }
    }
}

/// One full period: horizontal shear with `zeta_even`, then vertical shear
/// with `zeta_odd`.
#[inline]
pub fn double_step(
    x: TorusPoint,
    zeta_even: f64,
    zeta_odd: f64,
    amplitude: f64,
    profile: Profile,
) -> TorusPoint {
    let h = shear_step(x, zeta_even, Axis::Horizontal, amplitude, profile);
    shear_step(h, zeta_odd, Axis::Vertical, amplitude, profile)
}

/// 2×2 real matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jacobian2(pub [[f64; 2]; 2]);

impl Jacobian2 {
    pub const IDENTITY: Jacobian2 = Jacobian2([[1.0, 0.0], [0.0, 1.0]]);

    #[inline]
    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Matrix product `self * rhs`.
    #[inline]
    pub fn mul(&self, rhs: &Jacobian2) -> Jacobian2 {
        let (a, b) = (&self.0, &rhs.0);
        Jacobian2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    #[inline]
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }
}

/// Jacobian of [`shear_step`] at `x`.
#[inline]
pub fn jacobian_step(x: TorusPoint, zeta: f64, axis: Axis, amplitude: f64, profile: Profile) -> Jacobian2 {
    match axis {
        Axis::Horizontal => {
            Jacobian2([[1.0, amplitude * profile.slope(x.x2() - zeta)], [0.0, 1.0]])
        }
        Axis::Vertical => Jacobian2([[1.0, 0.0], [amplitude * profile.slope(x.x1() - zeta), 1.0]]),
    }
}

/// Image point and Jacobian of [`double_step`] at `x` (chain rule).
pub fn jacobian_double(
    x: TorusPoint,
    zeta_even: f64,
    zeta_odd: f64,
    amplitude: f64,
    profile: Profile,
) -> (TorusPoint, Jacobian2) {
    let jh = jacobian_step(x, zeta_even, Axis::Horizontal, amplitude, profile);
    let h = shear_step(x, zeta_even, Axis::Horizontal, amplitude, profile);
    let jv = jacobian_step(h, zeta_odd, Axis::Vertical, amplitude, profile);
    let y = shear_step(h, zeta_odd, Axis::Vertical, amplitude, profile);
    (y, jv.mul(&jh))
}

/// One realization of the flow: amplitude, profile and the i.i.d. uniform
/// shifts `ζ_0, ζ_1, …` drawn from a dedicated stream.
#[derive(Debug, Clone)]
pub struct ShearSchedule {
    pub amplitude: f64,
    pub profile: Profile,
    shifts: RngStream,
}

impl ShearSchedule {
    pub fn new(amplitude: f64, profile: Profile, shifts: RngStream) -> Self {
        ShearSchedule {
            amplitude,
            profile,
            shifts,
        }
    }

    pub fn shift_stream(&self) -> &RngStream {
        &self.shifts
    }

    /// The first `n_periods` pairs `(ζ_{2n}, ζ_{2n+1})`. Always the same for a
    /// given stream.
    pub fn shift_pairs(&self, n_periods: usize) -> Vec<(f64, f64)> {
        let mut rng = self.shifts.clone();
        (0..n_periods)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect()
    }
}

/// A pair of distinct points driven by the same flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointState {
    pub x: TorusPoint,
    pub y: TorusPoint,
}

impl TwoPointState {
    pub fn new(x: TorusPoint, y: TorusPoint) -> Result<Self> {
        if x == y {
            return Err(invalid_state("two-point state on the diagonal"));
        }
        Ok(TwoPointState { x, y })
    }

    pub fn separation(&self) -> Displacement {
        displacement(&self.x, &self.y)
    }

    pub fn swapped(&self) -> TwoPointState {
        TwoPointState {
            x: self.y,
            y: self.x,
        }
    }
}

/// Advances both points by the same [`double_step`].
pub fn two_point_step(
    s: &TwoPointState,
    zeta_even: f64,
    zeta_odd: f64,
    amplitude: f64,
    profile: Profile,
) -> Result<TwoPointState> {
    if s.x == s.y {
        return Err(invalid_state("two-point state on the diagonal"));
    }
    Ok(TwoPointState {
        x: double_step(s.x, zeta_even, zeta_odd, amplitude, profile),
        y: double_step(s.y, zeta_even, zeta_odd, amplitude, profile),
    })
}

/// Two-point state stored as base point plus minimal separation.
///
/// Separation updates use [`Profile::difference`], so relative precision is
/// kept for separations far below the spacing of doubles near 1. This is the
/// representation used by the drift and Ulam estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparatedPair {
    pub base: TorusPoint,
    pub sep: Displacement,
}

impl SeparatedPair {
    pub fn new(base: TorusPoint, sep: Displacement) -> Self {
        SeparatedPair { base, sep }
    }

    pub fn from_state(s: &TwoPointState) -> Self {
        SeparatedPair {
            base: s.x,
            sep: s.separation(),
        }
    }

    pub fn to_state(&self) -> TwoPointState {
        TwoPointState {
            x: self.base,
            y: self.base.translate(self.sep),
        }
    }

    /// Exact unit shear applied to both points.
    #[inline]
    pub fn shear(&self, zeta: f64, axis: Axis, amplitude: f64, profile: Profile) -> SeparatedPair {
        let across = self.base.coords()[axis.across()] - zeta;
        let d_across = self.sep.as_array()[axis.across()];
        let delta = amplitude * profile.difference(across, d_across);
        let base = shear_step(self.base, zeta, axis, amplitude, profile);
        let sep = match axis {
            Axis::Horizontal => Displacement::reduce(self.sep.d1 + delta, self.sep.d2),
            Axis::Vertical => Displacement::reduce(self.sep.d1, self.sep.d2 + delta),
        };
        SeparatedPair { base, sep }
    }

    #[inline]
    pub fn double_step(&self, zeta_even: f64, zeta_odd: f64, amplitude: f64, profile: Profile) -> SeparatedPair {
        self.shear(zeta_even, Axis::Horizontal, amplitude, profile)
            .shear(zeta_odd, Axis::Vertical, amplitude, profile)
    }
}

/// Point of the unit sphere bundle: base point and unit tangent direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveState {
    pub x: TorusPoint,
    pub v: [f64; 2],
}

impl ProjectiveState {
    pub fn new(x: TorusPoint, v: [f64; 2]) -> Result<Self> {
        let n = v[0].hypot(v[1]);
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid_arg("direction must be a non-zero finite vector"));
        }
        Ok(ProjectiveState {
            x,
            v: [v[0] / n, v[1] / n],
        })
    }
}

/// Advances the base point by one period and replaces the direction by its
/// normalized image under the period Jacobian.
pub fn projective_step(
    p: &ProjectiveState,
    zeta_even: f64,
    zeta_odd: f64,
    amplitude: f64,
    profile: Profile,
) -> ProjectiveState {
    let (x, j) = jacobian_double(p.x, zeta_even, zeta_odd, amplitude, profile);
    let w = j.apply(p.v);
    let n = w[0].hypot(w[1]);
    ProjectiveState {
        x,
        v: [w[0] / n, w[1] / n],
    }
}

/// Top Lyapunov exponent per period with its 95% half-width across samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub estimate: f64,
    pub ci95: f64,
    pub n_steps: usize,
    pub n_samples: usize,
}

/// Monte Carlo top Lyapunov exponent. Sample `i` uses substream `i` of `rng`
/// for its start point, direction and shifts.
pub fn lyapunov_exponent(
    amplitude: f64,
    profile: Profile,
    n_steps: usize,
    n_samples: usize,
    rng: &RngStream,
) -> Result<LyapunovEstimate> {
    if n_steps < 100 || n_samples < 10 {
        return Err(invalid_arg(format!(
            "need n_steps >= 100 and n_samples >= 10, got {n_steps} and {n_samples}"
        )));
    }
    let per_sample: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.substream(i);
            let x = TorusPoint::uniform(&mut r);
            let theta = TAU * r.random::<f64>();
            let mut p = ProjectiveState {
                x,
                v: [theta.cos(), theta.sin()],
            };
            let mut log_growth = 0.0;
            for _ in 0..n_steps {
                let (ze, zo) = (r.random::<f64>(), r.random::<f64>());
                let (x, j) = jacobian_double(p.x, ze, zo, amplitude, profile);
                let w = j.apply(p.v);
                let n = w[0].hypot(w[1]);
                log_growth += n.ln();
                p = ProjectiveState {
                    x,
                    v: [w[0] / n, w[1] / n],
                };
            }
            log_growth / n_steps as f64
        })
        .collect();
    let m = mean_ci(&per_sample);
    Ok(LyapunovEstimate {
        estimate: m.mean,
        ci95: m.half_width,
        n_steps,
        n_samples,
    })
}

/// Lipschitz constant of the velocity and the resulting Grönwall factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallConstants {
    /// `sup |∇u| = A sup|g'|`.
    pub a1: f64,
    /// `e^{a1}`: bounds the stretching and compression of one unit step.
    pub c0: f64,
}

pub fn gronwall_constants(amplitude: f64, profile: Profile) -> GronwallConstants {
    let a1 = amplitude.abs() * profile.max_slope();
    GronwallConstants { a1, c0: a1.exp() }
}
