//! Pathwise correlation decay `⟨e_m, e_{m'} ∘ X_n⟩` and the random prefactor
//! D̂_κ built from the last threshold exceedances `N_{m,m'}`.
//!
//! Correlations are particle averages over uniform starts, so they carry a
//! noise floor of about `1/√N_particles`. Thresholds `e^{-ζn}` are only
//! compared up to the horizon where they stay at least four times above that
//! floor; beyond it every exceedance would be noise.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::flow::{Axis, Profile, ShearSchedule};
use crate::stats::{linear_fit, mean_ci};
use crate::stochastic::{sde_unit_step_with_path, BrownianPath, DriftSign, SdeConfig, DEFAULT_SUBSTEPS};
use crate::torus::{RngStream, TorusPoint};

/// Pair of Fourier modes `(m, m')` for `⟨e_m, e_{m'} ∘ X_n⟩`,
/// `e_m(x) = e^{2πi m·x}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModePair {
    pub m: [i32; 2],
    pub m2: [i32; 2],
}

impl ModePair {
    /// `(m, -m)`: the pair whose correlation starts at 1.
    pub fn diagonal(m: [i32; 2]) -> Self {
        ModePair {
            m,
            m2: [-m[0], -m[1]],
        }
    }

    fn norm(v: [i32; 2]) -> f64 {
        (v[0] as f64).hypot(v[1] as f64)
    }

    pub fn norms(&self) -> (f64, f64) {
        (Self::norm(self.m), Self::norm(self.m2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationConfig {
    pub amplitude: f64,
    pub profile: Profile,
    pub kappa: f64,
    pub modes: Vec<ModePair>,
    /// Periods simulated per realization.
    pub n_max: usize,
    pub n_realizations: usize,
    pub n_particles: usize,
    pub substeps: usize,
    pub drift_sign: DriftSign,
}

impl CorrelationConfig {
    pub fn new(amplitude: f64, kappa: f64, modes: Vec<ModePair>) -> Self {
        CorrelationConfig {
            amplitude,
            profile: Profile::Sine,
            kappa,
            modes,
            n_max: 12,
            n_realizations: 50,
            n_particles: 10_000,
            substeps: DEFAULT_SUBSTEPS,
            drift_sign: DriftSign::Plus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(invalid_arg("at least one mode pair is required"));
        }
        if self.modes.iter().any(|p| p.m == [0, 0] || p.m2 == [0, 0]) {
            return Err(invalid_arg("modes must be nonzero"));
        }
        if self.n_particles < 10_000 {
            return Err(invalid_arg("n_particles must be >= 10^4"));
        }
        if self.n_max == 0 || self.n_realizations == 0 {
            return Err(invalid_arg("n_max and n_realizations must be >= 1"));
        }
        SdeConfig {
            kappa: self.kappa,
            substeps: self.substeps,
            drift_sign: self.drift_sign,
        }
        .validate()
    }

    pub fn noise_floor(&self) -> f64 {
        1.0 / (self.n_particles as f64).sqrt()
    }

    /// Last period at which `e^{-ζn} ≥ 4 / √N_particles`, capped at `n_max`.
    pub fn horizon(&self, zeta: f64) -> usize {
        if zeta <= 0.0 {
            return self.n_max;
        }
        let h = ((self.n_particles as f64).sqrt() / 4.0).ln() / zeta;
        (h.floor().max(1.0) as usize).min(self.n_max)
    }
}

/// `|⟨e_m, e_{m'} ∘ X_n⟩|` for `n = 0..=n_max`, one series per mode pair.
/// All particles share the shifts and the Brownian path.
pub fn correlation_series(
    cfg: &CorrelationConfig,
    shifts: &RngStream,
    noise: &RngStream,
    starts: &RngStream,
) -> Vec<Vec<f64>> {
    let mut g = starts.clone();
    let x0: Vec<TorusPoint> = (0..cfg.n_particles).map(|_| TorusPoint::uniform(&mut g)).collect();
    let mut x = x0.clone();
    let schedule = ShearSchedule::new(cfg.amplitude, cfg.profile, shifts.clone());
    let sde = SdeConfig {
        kappa: cfg.kappa,
        substeps: cfg.substeps,
        drift_sign: cfg.drift_sign,
    };
    let mut noise = noise.clone();
    let mut path = BrownianPath::zero(cfg.substeps);
    let mut series = vec![Vec::with_capacity(cfg.n_max + 1); cfg.modes.len()];
    let record = |series: &mut Vec<Vec<f64>>, x: &[TorusPoint]| {
        for (s, pair) in series.iter_mut().zip(&cfg.modes) {
            let (mut re, mut im) = (0.0, 0.0);
            for (a, b) in x0.iter().zip(x) {
                let phase = 2.0
                    * PI
                    * (pair.m[0] as f64 * a.x1()
                        + pair.m[1] as f64 * a.x2()
                        + pair.m2[0] as f64 * b.x1()
                        + pair.m2[1] as f64 * b.x2());
                let (si, co) = phase.sin_cos();
                re += co;
                im += si;
            }
            s.push(re.hypot(im) / x.len() as f64);
        }
    };
    record(&mut series, &x);
    for (ze, zo) in schedule.shift_pairs(cfg.n_max) {
        for (zeta, axis) in [(ze, Axis::Horizontal), (zo, Axis::Vertical)] {
            if cfg.kappa > 0.0 {
                path.resample(&mut noise);
            }
            for p in x.iter_mut() {
                *p = sde_unit_step_with_path(*p, zeta, axis, cfg.amplitude, cfg.profile, &sde, &path);
            }
        }
        record(&mut series, &x);
    }
    series
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaFlag {
    /// Log-linear fit over at least two points above the noise floor.
    Fitted,
    /// Only `n = 0` is above the floor; γ̂ = ln(c₀ / floor) bounds the rate
    /// from below.
    LowerBound,
    /// No decay detected; γ̂ = 0.
    NoDecay,
    /// The series never rises above the floor (non-resonant pair).
    Uninformative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub gamma: Option<f64>,
    pub flag: GammaFlag,
    pub points: usize,
    pub r2: Option<f64>,
}

/// Exponential rate of a realization-averaged correlation series, fitted
/// on the leading run of points above three times the noise floor.
pub fn fit_decay_rate(mean_series: &[f64], noise_floor: f64) -> GammaFit {
    let threshold = 3.0 * noise_floor;
    let points = mean_series.iter().take_while(|&&c| c > threshold).count();
    match points {
        0 => GammaFit {
            gamma: None,
            flag: GammaFlag::Uninformative,
            points,
            r2: None,
        },
        1 => GammaFit {
            gamma: Some((mean_series[0] / threshold).ln()),
            flag: GammaFlag::LowerBound,
            points,
            r2: None,
        },
        _ => {
            let xs: Vec<f64> = (0..points).map(|n| n as f64).collect();
            let ys: Vec<f64> = mean_series[..points].iter().map(|c| c.ln()).collect();
            let fit = linear_fit(&xs, &ys).expect("distinct abscissae");
            let gamma = -fit.slope;
            if gamma > 1e-9 {
                GammaFit {
                    gamma: Some(gamma),
                    flag: GammaFlag::Fitted,
                    points,
                    r2: Some(fit.r2),
                }
            } else {
                GammaFit {
                    gamma: Some(0.0),
                    flag: GammaFlag::NoDecay,
                    points,
                    r2: Some(fit.r2),
                }
            }
        }
    }
}

/// Per-realization exceedance statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DHatEstimate {
    /// `N_{m,m'}`: last `n` in `1..=horizon` with `c_n > e^{-ζn}`, else 0.
    pub n_hat: Vec<u32>,
    /// `K_κ`: largest `|m| ∨ |m'|` with `e^{ζN} > |m||m'|`, 0 if none.
    pub k_kappa: f64,
    /// `max e^{ζN}` over pairs with `|m|, |m'| ≤ K_κ`; 1 if there are none.
    pub d_hat: f64,
}

pub fn estimate_d_hat(series: &[Vec<f64>], modes: &[ModePair], zeta: f64, horizon: usize) -> DHatEstimate {
    let n_hat: Vec<u32> = series
        .iter()
        .map(|s| {
            (1..=horizon.min(s.len() - 1))
                .rev()
                .find(|&n| s[n] > (-zeta * n as f64).exp())
                .unwrap_or(0) as u32
        })
        .collect();
    let weight = |n: u32| (zeta * n as f64).exp();
    let k_kappa = modes
        .iter()
        .zip(&n_hat)
        .filter(|(p, &n)| {
            let (a, b) = p.norms();
            weight(n) > a * b
        })
        .map(|(p, _)| {
            let (a, b) = p.norms();
            a.max(b)
        })
        .fold(0.0, f64::max);
    let d_hat = modes
        .iter()
        .zip(&n_hat)
        .filter(|(p, _)| {
            let (a, b) = p.norms();
            a <= k_kappa && b <= k_kappa
        })
        .map(|(_, &n)| weight(n))
        .fold(1.0, f64::max);
    DHatEstimate {
        n_hat,
        k_kappa,
        d_hat,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub amplitude: f64,
    pub kappa: f64,
    pub modes: Vec<ModePair>,
    pub n_particles: usize,
    pub noise_floor: f64,
    /// `[realization][pair][n]`.
    pub series: Vec<Vec<Vec<f64>>>,
    /// Realization average, `[pair][n]`.
    pub mean_series: Vec<Vec<f64>>,
    pub gamma_fits: Vec<GammaFit>,
    /// Smallest informative per-pair rate.
    pub gamma_hat: f64,
    pub gamma_flag: GammaFlag,
    pub zeta: f64,
    pub horizon: usize,
    pub estimates: Vec<DHatEstimate>,
    pub d_hat_mean: f64,
    pub d_hat_sd: f64,
}

fn shift_stream(rng: &RngStream, r: usize) -> RngStream {
    rng.keyed("shifts", r as u64)
}

fn start_stream(rng: &RngStream, r: usize) -> RngStream {
    rng.keyed("starts", r as u64)
}

fn noise_stream(rng: &RngStream, r: usize, refresh: usize) -> RngStream {
    let base = rng.keyed("noise", r as u64);
    if refresh == 0 {
        base
    } else {
        base.substream(refresh as u64)
    }
}

impl CorrelationReport {
    fn from_series(cfg: &CorrelationConfig, series: Vec<Vec<Vec<f64>>>, zeta: Option<f64>) -> Self {
        let n_pairs = cfg.modes.len();
        let len = cfg.n_max + 1;
        let mut mean_series = vec![vec![0.0; len]; n_pairs];
        for real in &series {
            for (acc, s) in mean_series.iter_mut().zip(real) {
                acc.iter_mut().zip(s).for_each(|(a, v)| *a += v);
            }
        }
        let r = series.len() as f64;
        mean_series.iter_mut().flatten().for_each(|v| *v /= r);
        let floor = cfg.noise_floor();
        let gamma_fits: Vec<GammaFit> = mean_series.iter().map(|s| fit_decay_rate(s, floor)).collect();
        let informative: Vec<&GammaFit> = gamma_fits.iter().filter(|f| f.gamma.is_some()).collect();
        let (gamma_hat, gamma_flag) = match informative
            .iter()
            .min_by(|a, b| a.gamma.unwrap().total_cmp(&b.gamma.unwrap()))
        {
            Some(f) => (f.gamma.unwrap(), f.flag),
            None => (0.0, GammaFlag::Uninformative),
        };
        let mut report = CorrelationReport {
            amplitude: cfg.amplitude,
            kappa: cfg.kappa,
            modes: cfg.modes.clone(),
            n_particles: cfg.n_particles,
            noise_floor: floor,
            series,
            mean_series,
            gamma_fits,
            gamma_hat,
            gamma_flag,
            zeta: 0.0,
            horizon: 0,
            estimates: Vec::new(),
            d_hat_mean: f64::NAN,
            d_hat_sd: f64::NAN,
        };
        report.reanalyze(cfg, zeta.unwrap_or(gamma_hat / 3.0));
        report
    }

    /// Recomputes `N`, `K_κ` and D̂_κ for a given tail exponent ζ.
    pub fn reanalyze(&mut self, cfg: &CorrelationConfig, zeta: f64) {
        self.zeta = zeta;
        self.horizon = cfg.horizon(zeta);
        self.estimates = self
            .series
            .iter()
            .map(|s| estimate_d_hat(s, &self.modes, zeta, self.horizon))
            .collect();
        let d: Vec<f64> = self.d_hats();
        let m = mean_ci(&d);
        self.d_hat_mean = m.mean;
        self.d_hat_sd = m.std_dev;
    }

    pub fn d_hats(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.d_hat).collect()
    }
}

/// Simulates `n_realizations` independent realizations (shifts, noise and
/// particle starts) and fits γ̂; ζ defaults to γ̂/3.
pub fn correlation_decay(
    cfg: &CorrelationConfig,
    rng: &RngStream,
    zeta: Option<f64>,
) -> Result<CorrelationReport> {
    cfg.validate()?;
    let series: Vec<Vec<Vec<f64>>> = (0..cfg.n_realizations)
        .into_par_iter()
        .map(|r| correlation_series(cfg, &shift_stream(rng, r), &noise_stream(rng, r, 0), &start_stream(rng, r)))
        .collect();
    Ok(CorrelationReport::from_series(cfg, series, zeta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub kappa: f64,
    pub q: f64,
    pub moment: f64,
    pub std_error: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    /// Common tail exponent: a third of the smallest γ̂ over κ.
    pub zeta: f64,
    pub kappas: Vec<f64>,
    pub gamma_per_kappa: Vec<f64>,
    pub rows: Vec<MomentRow>,
    /// `(q, max over κ of the moment)`.
    pub max_over_kappa: Vec<(f64, f64)>,
    pub reports: Vec<CorrelationReport>,
}

impl MomentTable {
    pub fn row(&self, kappa: f64, q: f64) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.kappa == kappa && r.q == q)
    }
}

/// Empirical moments `E[D̂_κ^q]` across realizations for each κ, with one ζ
/// shared by all κ. The same random streams are reused for every κ.
pub fn dkappa_moments(
    base: &CorrelationConfig,
    kappa_list: &[f64],
    q_list: &[f64],
    rng: &RngStream,
) -> Result<MomentTable> {
    if base.n_realizations < 50 {
        return Err(invalid_arg("moment estimates need at least 50 realizations"));
    }
    if kappa_list.is_empty() {
        return Err(invalid_arg("kappa_list is empty"));
    }
    let mut reports = kappa_list
        .iter()
        .map(|&kappa| {
            let cfg = CorrelationConfig { kappa, ..base.clone() };
            correlation_decay(&cfg, rng, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let gamma_per_kappa: Vec<f64> = reports.iter().map(|r| r.gamma_hat).collect();
    let zeta = gamma_per_kappa.iter().copied().fold(f64::INFINITY, f64::min) / 3.0;
    let mut rows = Vec::new();
    for (rep, &kappa) in reports.iter_mut().zip(kappa_list) {
        let cfg = CorrelationConfig { kappa, ..base.clone() };
        rep.reanalyze(&cfg, zeta);
        let d = rep.d_hats();
        for &q in q_list {
            let powered: Vec<f64> = d.iter().map(|v| v.powf(q)).collect();
            let m = mean_ci(&powered);
            rows.push(MomentRow {
                kappa,
                q,
                moment: m.mean,
                std_error: m.std_error(),
                n: m.n,
            });
        }
    }
    let max_over_kappa = q_list
        .iter()
        .map(|&q| {
            let mx = rows
                .iter()
                .filter(|r| r.q == q)
                .map(|r| r.moment)
                .fold(f64::NEG_INFINITY, f64::max);
            (q, mx)
        })
        .collect();
    Ok(MomentTable {
        zeta,
        kappas: kappa_list.to_vec(),
        gamma_per_kappa,
        rows,
        max_over_kappa,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshReport {
    pub zeta: f64,
    /// `[shift realization][noise refresh]`.
    pub d_hat: Vec<Vec<f64>>,
    /// Pooled standard deviation of D̂ across noise refreshes at fixed shifts.
    pub within_sd: f64,
    /// Standard deviation of D̂ across shift realizations (first noise path).
    pub cross_sd: f64,
}

/// D̂_κ under `n_refresh` independent noise paths for each of
/// `cfg.n_realizations` fixed shift sequences (particle starts fixed too).
pub fn noise_refresh_spread(
    cfg: &CorrelationConfig,
    n_refresh: usize,
    zeta: f64,
    rng: &RngStream,
) -> Result<RefreshReport> {
    cfg.validate()?;
    if n_refresh < 2 || cfg.n_realizations < 2 {
        return Err(invalid_arg("need at least 2 refreshes and 2 shift realizations"));
    }
    let horizon = cfg.horizon(zeta);
    let jobs: Vec<(usize, usize)> = (0..cfg.n_realizations)
        .flat_map(|r| (0..n_refresh).map(move |j| (r, j)))
        .collect();
    let flat: Vec<f64> = jobs
        .par_iter()
        .map(|&(r, j)| {
            let s = correlation_series(cfg, &shift_stream(rng, r), &noise_stream(rng, r, j), &start_stream(rng, r));
            estimate_d_hat(&s, &cfg.modes, zeta, horizon).d_hat
        })
        .collect();
    let d_hat: Vec<Vec<f64>> = flat.chunks(n_refresh).map(|c| c.to_vec()).collect();
    let within_var = d_hat
        .iter()
        .map(|row| mean_ci(row).std_dev.powi(2))
        .sum::<f64>()
        / d_hat.len() as f64;
    let firsts: Vec<f64> = d_hat.iter().map(|row| row[0]).collect();
    Ok(RefreshReport {
        zeta,
        within_sd: within_var.sqrt(),
        cross_sd: mean_ci(&firsts).std_dev,
        d_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modes() -> Vec<ModePair> {
        vec![
            ModePair::diagonal([1, 0]),
            ModePair::diagonal([0, 1]),
            ModePair::diagonal([1, 1]),
        ]
    }

    #[test]
    fn frozen_flow_does_not_decay() {
        let mut cfg = CorrelationConfig::new(0.0, 0.0, modes());
        cfg.n_realizations = 2;
        cfg.n_max = 4;
        let rep = correlation_decay(&cfg, &RngStream::new(1, 0), None).unwrap();
        for s in rep.mean_series.iter() {
            assert!(s.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        }
        assert_eq!(rep.gamma_hat, 0.0);
        assert_eq!(rep.gamma_flag, GammaFlag::NoDecay);
        assert!(rep.d_hats().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn orthonormality_at_time_zero() {
        let mut cfg = CorrelationConfig::new(1.0, 0.0, vec![ModePair::diagonal([1, 0]), ModePair { m: [1, 0], m2: [1, 0] }]);
        cfg.n_max = 1;
        let s = correlation_series(&cfg, &RngStream::new(0, 1), &RngStream::new(0, 2), &RngStream::new(0, 3));
        assert!((s[0][0] - 1.0).abs() < 1e-12);
        assert!(s[1][0] < 3.0 / (cfg.n_particles as f64).sqrt());
        assert!(s.iter().flatten().all(|&c| (0.0..=1.0 + 1e-12).contains(&c)));
    }

    #[test]
    fn strong_shear_decorrelates() {
        let mut cfg = CorrelationConfig::new(2.0, 1e-3, modes());
        cfg.n_realizations = 4;
        cfg.n_max = 6;
        cfg.substeps = 8;
        let rep = correlation_decay(&cfg, &RngStream::new(2, 0), None).unwrap();
        assert!(rep.gamma_hat > 0.0, "{:?}", rep.gamma_fits);
        assert!(rep.d_hats().iter().all(|&d| d >= 1.0));
    }

    #[test]
    fn d_hat_by_hand() {
        let m = vec![ModePair::diagonal([1, 0]), ModePair::diagonal([2, 0])];
        let zeta = 0.5;
        // pair 0 exceeds at n = 2, pair 1 never
        let s = vec![vec![1.0, 0.9, 0.5, 0.01], vec![1.0, 0.01, 0.01, 0.01]];
        let e = estimate_d_hat(&s, &m, zeta, 3);
        assert_eq!(e.n_hat, vec![2, 0]);
        assert_eq!(e.k_kappa, 1.0);
        assert!((e.d_hat - 1f64.exp()).abs() < 1e-12);
        let e = estimate_d_hat(&s, &m, zeta, 1);
        assert_eq!(e.n_hat, vec![1, 0]);
    }

    #[test]
    fn decay_fit_flags() {
        let f = fit_decay_rate(&[1.0, 0.5, 0.25, 0.125, 0.001], 0.01);
        assert_eq!(f.flag, GammaFlag::Fitted);
        assert!((f.gamma.unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(fit_decay_rate(&[1.0, 0.001], 0.01).flag, GammaFlag::LowerBound);
        assert_eq!(fit_decay_rate(&[0.001, 0.001], 0.01).flag, GammaFlag::Uninformative);
        assert_eq!(fit_decay_rate(&[1.0, 1.0, 1.0], 0.01).flag, GammaFlag::NoDecay);
    }

    #[test]
    fn horizon_respects_noise_floor() {
        let cfg = CorrelationConfig::new(1.0, 0.0, modes());
        let h = cfg.horizon(0.5);
        assert!((-0.5 * h as f64).exp() >= 4.0 * cfg.noise_floor());
        assert_eq!(cfg.horizon(0.0), cfg.n_max);
    }
}
