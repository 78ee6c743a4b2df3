use std::f64::consts::PI;

use shearmix::flow::{Profile, ShearSchedule};
use shearmix::spectral::*;
use shearmix::stats::linear_fit;
use shearmix::torus::{RngStream, TorusPoint};

fn schedule(a: f64, seed: u64) -> ShearSchedule {
    ShearSchedule::new(a, Profile::Sine, RngStream::new(seed, 0))
}

#[test]
fn strang_splitting_is_second_order() {
    let n = 64;
    let (kappa, a) = (2e-3, 0.5);
    let solver = SpectralSolver::new(n).unwrap();
    let rho0 = ScalarField::from_fn(n, |x, y| 1.0 + (2.0 * PI * x).sin() * (2.0 * PI * y).cos() + 0.5 * (4.0 * PI * y).sin()).unwrap();
    let run = |substeps: usize| {
        let mut f = rho0.clone();
        solver
            .period_step(&mut f, 0.21, 0.67, kappa, a, Profile::Sine, Splitting::Strang { substeps })
            .unwrap();
        f
    };
    let reference = run(256);
    let levels = [1usize, 2, 4, 8];
    let xs: Vec<f64> = levels.iter().map(|&s| (1.0 / s as f64).ln()).collect();
    let ys: Vec<f64> = levels.iter().map(|&s| run(s).l2_distance(&reference).ln()).collect();
    let fit = linear_fit(&xs, &ys).unwrap();
    assert!(fit.slope >= 1.9, "order {}", fit.slope);
}

#[test]
fn lie_splitting_is_first_order() {
    let n = 64;
    let solver = SpectralSolver::new(n).unwrap();
    let rho0 = ScalarField::from_fn(n, |x, y| 1.0 + (2.0 * PI * (x + y)).cos()).unwrap();
    let run = |s: Splitting| {
        let mut f = rho0.clone();
        solver.period_step(&mut f, 0.4, 0.1, 2e-3, 0.5, Profile::Sine, s).unwrap();
        f
    };
    let reference = run(Splitting::Strang { substeps: 256 });
    let e1 = run(Splitting::Lie { substeps: 4 }).l2_distance(&reference);
    let e2 = run(Splitting::Lie { substeps: 8 }).l2_distance(&reference);
    let order = (e1 / e2).log2();
    assert!((0.8..1.3).contains(&order), "order {order}");
}

#[test]
fn heat_kernel_from_narrow_gaussian() {
    let (n, sigma, kappa) = (256, 0.02, 1e-3);
    let solver = SpectralSolver::new(n).unwrap();
    let c = TorusPoint::from_reduced(0.3, 0.8);
    let mut f = ScalarField::gaussian_bump(n, c, sigma).unwrap();
    solver
        .period_step(&mut f, 0.5, 0.5, kappa, 0.0, Profile::Sine, Splitting::default())
        .unwrap();
    // one period = two time units of heat: variance grows by 2κ·2
    let exact = ScalarField::gaussian_bump(n, c, (sigma * sigma + 4.0 * kappa).sqrt()).unwrap();
    const BINS: usize = 16;
    let cell = n / BINS;
    let mut l1 = 0.0;
    for bj in 0..BINS {
        for bi in 0..BINS {
            let mut d = 0.0;
            for j in bj * cell..(bj + 1) * cell {
                for i in bi * cell..(bi + 1) * cell {
                    d += f.get(i, j) - exact.get(i, j);
                }
            }
            l1 += (d / (n * n) as f64).abs();
        }
    }
    assert!(l1 <= 1e-8, "binned L1 {l1}");
}

#[test]
fn single_mode_decay_run_matches_heat_law() {
    let (n, kappa) = (64, 1e-3);
    let solver = SpectralSolver::new(n).unwrap();
    let rho0 = ScalarField::from_fn(n, |x, _| 1.0 + (2.0 * PI * x).sin()).unwrap();
    let (run, _) = decay_run(&solver, &rho0, &schedule(0.0, 1), kappa, 20, Splitting::default(), &[]).unwrap();
    let l2_0 = run.series.l2[0];
    for (t, l2) in run.series.times.iter().zip(&run.series.l2) {
        assert!((l2 - (-4.0 * PI * PI * kappa * t).exp() * l2_0).abs() < 1e-10);
    }
}

#[test]
fn shear_enhances_dissipation() {
    let kappa = 1e-4;
    let a = 0.5;
    let n = resolved_grid(64, a, kappa);
    let solver = SpectralSolver::new(n).unwrap();
    let rho0 = ScalarField::from_fn(n, |x, _| 1.0 + (2.0 * PI * x).sin()).unwrap();
    // heat alone halves L² at t = ln 2 / (4π²κ)
    let heat_half = 2f64.ln() / (4.0 * PI * PI * kappa);
    let budget = (heat_half / 5.0 / 2.0).floor() as usize;
    let (run, _) = decay_run(&solver, &rho0, &schedule(a, 3), kappa, budget, Splitting::default(), &[]).unwrap();
    assert!(!run.under_resolved);
    let l2 = &run.series.l2;
    assert!(l2.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "L² increased");
    let half = l2.iter().position(|&v| v <= 0.5 * l2[0]);
    assert!(half.is_some(), "no halving within {budget} periods; final ratio {}", l2.last().unwrap() / l2[0]);
}

#[test]
fn heat_only_mixing_time_matches_closed_form() {
    let solver = SpectralSolver::new(64).unwrap();
    let opts = MixingOptions::default();
    for &kappa in &[1e-1, 1e-2, 1e-3] {
        let r = mixing_time(&solver, kappa, &schedule(0.0, 1), &opts).unwrap();
        let t = r.t_mix.unwrap() as f64;
        // far tail: sup gap ≈ 4 e^{-8π²κ p}
        let predicted = ((4.0 / opts.epsilon).ln() / (8.0 * PI * PI * kappa)).ceil();
        assert!((t - predicted).abs() <= 1.0, "κ={kappa}: {t} vs {predicted}");
    }
}

#[test]
fn shear_shortens_mixing_time_tenfold() {
    let kappa = 1e-4;
    let a = 0.5;
    let opts = MixingOptions {
        sources_per_side: 2,
        max_periods: 400,
        ..MixingOptions::default()
    };
    let heat = mixing_time(&SpectralSolver::new(64).unwrap(), kappa, &schedule(0.0, 1), &MixingOptions::default())
        .unwrap()
        .t_mix
        .unwrap();
    let solver = SpectralSolver::new(resolved_grid(256, a, kappa)).unwrap();
    let sheared = mixing_time(&solver, kappa, &schedule(a, 4), &opts).unwrap();
    let t = sheared.t_mix.expect("sheared run did not mix");
    assert!(10 * t <= heat, "{t} vs heat {heat}");
}

#[test]
fn halving_epsilon_costs_ln2_over_tail_rate() {
    let kappa = 1e-3;
    let a = 0.5;
    let solver = SpectralSolver::new(resolved_grid(128, a, kappa)).unwrap();
    let base = MixingOptions {
        sources_per_side: 2,
        max_periods: 400,
        ..MixingOptions::default()
    };
    let r1 = mixing_time(&solver, kappa, &schedule(a, 5), &base).unwrap();
    let r2 = mixing_time(&solver, kappa, &schedule(a, 5), &MixingOptions { epsilon: 0.05, ..base }).unwrap();
    let (t1, t2) = (r1.t_mix.unwrap(), r2.t_mix.unwrap());
    // tail rate from the last few periods of the longer run
    let tail = &r2.sup_gap[r2.sup_gap.len().saturating_sub(6)..];
    let xs: Vec<f64> = (0..tail.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|v| v.ln()).collect();
    let gamma = -linear_fit(&xs, &ys).unwrap().slope;
    assert!(gamma > 0.0);
    let predicted = 2f64.ln() / gamma;
    assert!(((t2 - t1) as f64 - predicted).abs() <= 1.0, "Δt={} vs {predicted}", t2 - t1);
}

#[test]
fn norms_of_separable_data() {
    let n = 128;
    let solver = SpectralSolver::new(n).unwrap();
    let f = ScalarField::from_fn(n, |x, _| 3.0 + (2.0 * PI * x).sin()).unwrap();
    let norms = solver.norms(&f, &[0.0, -1.0, 1.0]).unwrap();
    assert!((norms.l2 - 0.5f64.sqrt()).abs() < 1e-12);
    assert!((norms.sobolev[0] - norms.l2).abs() < 1e-12);
    assert!((norms.sobolev[1] - (1.0 + 4.0 * PI * PI).powf(-0.5) / 2f64.sqrt()).abs() < 1e-10);
    assert!((norms.sobolev[2] - (1.0 + 4.0 * PI * PI).sqrt() / 2f64.sqrt()).abs() < 1e-9);
}
