use shearmix::flow::{Profile, SeparatedPair, TwoPointState};
use shearmix::harris::*;
use shearmix::stats::mean_ci;
use shearmix::stochastic::DriftSign;
use shearmix::torus::{Displacement, RngStream, TorusPoint};

fn pair_at(r: f64) -> TwoPointState {
    let x = TorusPoint::from_reduced(0.37, 0.11);
    TwoPointState::new(x, x.translate(Displacement::reduce(r, 0.0))).unwrap()
}

#[test]
fn drift_sign_does_not_change_the_law() {
    let params = LyapunovParams::default();
    let plus = PairDynamics::new(2.0, Profile::Sine, 1e-3).unwrap();
    let minus = plus.with_drift_sign(DriftSign::Minus);
    for r in [1e-6, 1e-3] {
        let a = drift_ratio(&pair_at(r), &plus, &params, 1, 20_000, &mut RngStream::new(31, 0)).unwrap();
        let b = drift_ratio(&pair_at(r), &minus, &params, 1, 20_000, &mut RngStream::new(31, 1)).unwrap();
        assert!((a.ratio - b.ratio).abs() < a.ci + b.ci, "{a:?} vs {b:?}");
    }
}

#[test]
fn multi_step_drift_respects_iterated_bound() {
    // PV ≤ γ₁V + b with γ₁ = β̂ inside the zone and b = K̂ outside, so
    // P^l V ≤ γ₁^l V + b(1 − γ₁^l)/(1 − γ₁).
    let params = LyapunovParams::default();
    let dynamics = PairDynamics::new(2.0, Profile::Sine, 0.0).unwrap();
    let grid = DriftGrid {
        n_radii: 4,
        n_directions: 8,
        n_outer_radii: 4,
        ..DriftGrid::default()
    };
    let rep = drift_certificate(&dynamics, &params, &grid, 1, 4000, &RngStream::new(32, 0), None).unwrap();
    assert!(rep.pass);
    let g1 = rep.beta_hat + rep.beta_ci;
    let b = rep.k_hat + rep.k_ci;
    let l = 3;
    let mut rng = RngStream::new(32, 1);
    let mut path = dynamics.new_path();
    for r in [1e-12, 1e-8, 1e-4, 1e-2, 0.3] {
        let v0 = params.v_of_linf(r);
        let vals: Vec<f64> = (0..4000)
            .map(|_| {
                let mut p = SeparatedPair::new(TorusPoint::uniform(&mut rng), Displacement::reduce(r, 0.0));
                for _ in 0..l {
                    p = dynamics.step_pair(&p, &mut path, &mut rng);
                }
                params.v_of_sep(p.sep)
            })
            .collect();
        let m = mean_ci(&vals);
        let bound = g1.powi(l) * v0 + b * (1.0 - g1.powi(l)) / (1.0 - g1);
        assert!(m.mean <= bound + m.half_width, "r={r}: {} > {bound}", m.mean);
    }
}

#[test]
fn certificate_is_stable_in_kappa() {
    let params = LyapunovParams::default();
    let grid = DriftGrid {
        n_radii: 4,
        n_directions: 8,
        n_outer_radii: 2,
        ..DriftGrid::default()
    };
    let rng = RngStream::new(33, 0);
    let b0 = drift_certificate(&PairDynamics::new(5.0, Profile::Sine, 0.0).unwrap(), &params, &grid, 1, 2000, &rng, None)
        .unwrap();
    let b1 = drift_certificate(&PairDynamics::new(5.0, Profile::Sine, 1e-3).unwrap(), &params, &grid, 1, 2000, &rng, None)
        .unwrap();
    assert!(b0.pass && b1.pass);
    assert!((b0.beta_hat - b1.beta_hat).abs() < 0.05);
}

#[test]
fn minorization_grows_with_steps() {
    let dynamics = PairDynamics::new(10.0, Profile::Sine, 0.0).unwrap();
    let starts: Vec<TwoPointState> = [1e-3, 1e-2, 0.05].iter().map(|&r| pair_at(r)).collect();
    let target = SeparationSet::LinfAtLeast { r: 0.25 };
    let rng = RngStream::new(34, 0);
    let reps: Vec<MinorizationReport> = [20, 30, 40]
        .iter()
        .map(|&l| minorization_estimate(&starts, &dynamics, l, &target, 4000, &rng).unwrap())
        .collect();
    for w in reps.windows(2) {
        let se = |p: f64| (p * (1.0 - p) / 4000.0).sqrt();
        let (a, b) = (w[0].alpha_hat, w[1].alpha_hat);
        assert!(b >= a - 2.0 * (se(a) + se(b)), "{a} -> {b}");
    }
    assert!(reps[0].alpha_hat > 0.5, "{}", reps[0].alpha_hat);
}

#[test]
fn moment_table_basics() {
    let modes = vec![ModePair::diagonal([1, 0]), ModePair::diagonal([0, 1])];
    let mut cfg = CorrelationConfig::new(10.0, 1e-3, modes);
    cfg.n_max = 4;
    cfg.substeps = 8;
    let tab = dkappa_moments(&cfg, &[1e-3, 1e-4], &[0.0, 1.0, 2.0], &RngStream::new(35, 0)).unwrap();
    for &k in &[1e-3, 1e-4] {
        assert_eq!(tab.row(k, 0.0).unwrap().moment, 1.0);
        let (m1, m2) = (tab.row(k, 1.0).unwrap().moment, tab.row(k, 2.0).unwrap().moment);
        assert!(1.0 <= m1 && m1 <= m2);
    }
    assert!(tab.gamma_per_kappa.iter().all(|&g| g > 0.0));
    cfg.n_realizations = 10;
    assert!(dkappa_moments(&cfg, &[1e-3], &[1.0], &RngStream::new(35, 0)).is_err());
}

#[test]
fn refreshing_noise_does_not_move_d_hat_beyond_shift_spread() {
    let modes = vec![ModePair::diagonal([1, 0]), ModePair::diagonal([0, 1]), ModePair::diagonal([1, 1])];
    let mut cfg = CorrelationConfig::new(10.0, 1e-4, modes);
    cfg.n_max = 6;
    cfg.n_realizations = 6;
    cfg.substeps = 8;
    let rng = RngStream::new(36, 0);
    let rep = correlation_decay(&cfg, &rng, None).unwrap();
    assert!(rep.gamma_hat > 0.0);
    let refresh = noise_refresh_spread(&cfg, 4, rep.zeta, &rng).unwrap();
    assert!(refresh.within_sd <= refresh.cross_sd, "{refresh:?}");
    // first refresh reuses the realization's own noise path
    for (r, row) in refresh.d_hat.iter().enumerate() {
        assert_eq!(row[0], rep.estimates[r].d_hat);
    }
}

#[test]
fn ulam_gap_is_positive_for_mixing_shear() {
    let dynamics = PairDynamics::new(2.0, Profile::Sine, 1e-3).unwrap();
    let rng = RngStream::new(37, 0);
    let chain = ulam_build(&dynamics, 8, 2000, &rng).unwrap();
    for i in 0..chain.dim() {
        assert!((chain.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let gap = spectral_gap(&chain, &rng);
    assert!(gap.gap > 0.5, "{gap:?}");
    let c = contraction_factor(&chain, &LyapunovParams::default(), 0.1, 2, 100, &rng).unwrap();
    assert!(c.alpha_bar_hat < 1.0);
}

#[test]
fn independent_kick_separation_law_is_base_independent() {
    let dynamics = PairDynamics::new(2.0, Profile::Sine, 1e-3).unwrap().with_noise(PairNoise::IndependentPulsed);
    let v = difference_chain_validation(&dynamics, 200_000, &RngStream::new(38, 0)).unwrap();
    assert!(v.max_abs_z < 4.0, "{}", v.max_abs_z);
}
