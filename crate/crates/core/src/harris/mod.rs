//! Monte Carlo certification of the Harris-theorem ingredients for the
//! two-point chain: a Lyapunov drift, minorization on sublevel sets, ρ_β
//! contraction of an Ulam discretization, and pathwise correlation decay.
//!
//! Every estimator works on [`SeparatedPair`]s. Shifts are uniform, so the
//! one-step law of the separation does not depend on the base point
//! (translation covariance); [`difference_chain_validation`] checks that
//! reduction empirically.

mod correlation;
mod drift;
mod ulam;
mod validation;

pub use correlation::{
    correlation_decay, correlation_series, dkappa_moments, estimate_d_hat, fit_decay_rate,
    noise_refresh_spread, CorrelationConfig, CorrelationReport, DHatEstimate, GammaFit,
    GammaFlag, MomentRow, MomentTable, ModePair, RefreshReport,
};
pub use drift::{
    drift_certificate, drift_ratio, find_certified_amplitude, zone_radius, AmplitudeSearch,
    DriftCell, DriftGrid, DriftReport, RatioEstimate,
};
pub use ulam::{
    contraction_factor, rho_beta_distance, spectral_gap, ulam_build, ContractionReport,
    GapEstimate, UlamChain,
};
pub use validation::{
    difference_chain_validation, minorization_estimate, DifferenceValidation, MinorizationReport,
    SeparationSet,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_state, Result};
use crate::flow::{Axis, Profile, SeparatedPair, TwoPointState};
use crate::stochastic::{
    pulsed_pair_unit_step, pulsed_two_point_step, sde_pair_unit_step, two_point_sde_step,
    BrownianPath, DriftSign, SdeConfig, DEFAULT_SUBSTEPS,
};
use crate::torus::Displacement;

/// Exponent and cutoff of `V(x, y) = min(|x - y|_∞, s*)^{-p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LyapunovParams {
    pub p: f64,
    pub s_star: f64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        LyapunovParams { p: 0.2, s_star: 0.1 }
    }
}

impl LyapunovParams {
    pub fn new(p: f64, s_star: f64) -> Result<Self> {
        let params = LyapunovParams { p, s_star };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 0.25) {
            return Err(invalid_arg(format!("p must lie in (0, 1/4], got {}", self.p)));
        }
        if !(self.s_star > 0.0 && self.s_star < 0.5) {
            return Err(invalid_arg(format!(
                "s_star must lie in (0, 1/2), got {}",
                self.s_star
            )));
        }
        Ok(())
    }

    /// `V` as a function of the ℓ∞ separation; `+∞` at zero.
    #[inline]
    pub fn v_of_linf(&self, r: f64) -> f64 {
        r.min(self.s_star).powf(-self.p)
    }

    #[inline]
    pub fn v_of_sep(&self, d: Displacement) -> f64 {
        self.v_of_linf(d.norm_linf())
    }

    /// Smallest value of V, attained off `Δ(s*)`.
    pub fn v_min(&self) -> f64 {
        self.s_star.powf(-self.p)
    }
}

pub fn lyapunov_v(s: &TwoPointState, params: &LyapunovParams) -> Result<f64> {
    let r = s.separation().norm_linf();
    if r == 0.0 {
        return Err(invalid_state("V is infinite on the diagonal"));
    }
    Ok(params.v_of_linf(r))
}

/// How the two points of a pair feel diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairNoise {
    /// Both points are driven by the same Brownian path (stochastic flow).
    #[default]
    Common,
    /// Pulsed diffusion with independent Gaussian kicks per point.
    IndependentPulsed,
}

/// One period of the two-point chain at amplitude `A` and diffusivity κ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDynamics {
    pub amplitude: f64,
    pub profile: Profile,
    pub kappa: f64,
    pub noise: PairNoise,
    pub substeps: usize,
    /// Applies to the common-noise SDE only; pulsed maps always use `+A`.
    pub drift_sign: DriftSign,
}

impl PairDynamics {
    /// Common noise, default substeps and the `+u` drift, so κ → 0 is
    /// pathwise continuous with the deterministic maps.
    pub fn new(amplitude: f64, profile: Profile, kappa: f64) -> Result<Self> {
        let d = PairDynamics {
            amplitude,
            profile,
            kappa,
            noise: PairNoise::Common,
            substeps: DEFAULT_SUBSTEPS,
            drift_sign: DriftSign::Plus,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_noise(mut self, noise: PairNoise) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_drift_sign(mut self, sign: DriftSign) -> Self {
        self.drift_sign = sign;
        self
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(invalid_arg("amplitude must be finite"));
        }
        self.sde().validate()
    }

    fn sde(&self) -> SdeConfig {
        SdeConfig {
            kappa: self.kappa,
            substeps: self.substeps,
            drift_sign: self.drift_sign,
        }
    }

    pub fn new_path(&self) -> BrownianPath {
        BrownianPath::zero(self.substeps)
    }

    /// One period with fresh shifts (and noise, if any) drawn from `rng`.
    /// `path` is scratch space reused between calls.
    #[inline]
    pub fn step_pair<R: Rng + ?Sized>(
        &self,
        pair: &SeparatedPair,
        path: &mut BrownianPath,
        rng: &mut R,
    ) -> SeparatedPair {
        let ze: f64 = rng.random();
        let zo: f64 = rng.random();
        let cfg = self.sde();
        let mut out = *pair;
        for (zeta, axis) in [(ze, Axis::Horizontal), (zo, Axis::Vertical)] {
            out = match self.noise {
                PairNoise::Common => {
                    if self.kappa > 0.0 {
                        path.resample(rng);
                    }
                    sde_pair_unit_step(&out, zeta, axis, self.amplitude, self.profile, &cfg, path)
                }
                PairNoise::IndependentPulsed => pulsed_pair_unit_step(
                    &out,
                    zeta,
                    axis,
                    self.amplitude,
                    self.profile,
                    self.kappa,
                    rng,
                ),
            };
        }
        out
    }

    /// Same law as [`step_pair`](Self::step_pair), computed on the two
    /// points directly (no separation bookkeeping).
    pub fn step_state<R: Rng + ?Sized>(&self, s: &TwoPointState, rng: &mut R) -> Result<TwoPointState> {
        let ze: f64 = rng.random();
        let zo: f64 = rng.random();
        match self.noise {
            PairNoise::Common => {
                two_point_sde_step(s, ze, zo, self.amplitude, self.profile, &self.sde(), rng)
            }
            PairNoise::IndependentPulsed => {
                pulsed_two_point_step(s, ze, zo, self.amplitude, self.profile, self.kappa, rng)
            }
        }
    }
}
