use std::f64::consts::PI;

use rand::Rng;
use shearmix::flow::{gronwall_constants, shear_step, Axis, Profile, SeparatedPair};
use shearmix::spectral::{ScalarField, SpectralSolver};
use shearmix::stochastic::*;
use shearmix::torus::{displacement, dist, wrapped_gaussian, Displacement, RngStream, TorusPoint};

#[test]
fn brownian_variance_without_shear() {
    let kappa = 1e-3;
    let cfg = SdeConfig::with_kappa(kappa).unwrap();
    let mut g = RngStream::new(21, 0);
    let x = TorusPoint::from_reduced(0.5, 0.5);
    let n = 100_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let y = sde_unit_step(x, g.random(), Axis::Horizontal, 0.0, Profile::Sine, &cfg, &mut g);
        let d = displacement(&x, &y);
        s1 += d.d1 * d.d1;
        s2 += d.d2 * d.d2;
    }
    for v in [s1 / n as f64, s2 / n as f64] {
        assert!((v / (2.0 * kappa) - 1.0).abs() < 0.03, "variance {v}");
    }
}

#[test]
fn pulsed_without_shear_adds_two_kicks() {
    let kappa = 1e-3;
    let mut g = RngStream::new(22, 0);
    let x = TorusPoint::from_reduced(0.1, 0.9);
    let n = 100_000;
    let mut s = [0.0; 2];
    for _ in 0..n {
        let y = pulsed_step(x, g.random(), g.random(), 0.0, Profile::Sine, kappa, &mut g).unwrap();
        let d = displacement(&x, &y);
        s[0] += d.d1 * d.d1;
        s[1] += d.d2 * d.d2;
    }
    for v in s {
        assert!((v / n as f64 / (2.0 * kappa) - 1.0).abs() < 0.03);
    }
    let y = pulsed_step(x, 0.3, 0.7, 2.0, Profile::Sine, 0.0, &mut g).unwrap();
    assert_eq!(y, shearmix::flow::double_step(x, 0.3, 0.7, 2.0, Profile::Sine));
}

#[test]
fn substep_self_convergence() {
    // Paired samples: the coarse path is the fine path seen on a coarser
    // grid, so the mean coupling distance bounds the Wasserstein-1 distance.
    let kappa = 1e-4;
    let fine = SdeConfig::new(kappa, 256, DriftSign::Plus).unwrap();
    let coarse = SdeConfig { substeps: 16, ..fine };
    let mut g = RngStream::new(23, 0);
    let n = 10_000;
    let mut w1 = 0.0;
    for k in 0..n {
        let x = TorusPoint::uniform(&mut g);
        let zeta: f64 = g.random();
        let axis = if k % 2 == 0 { Axis::Horizontal } else { Axis::Vertical };
        let path = BrownianPath::sample(256, &mut g);
        let a = sde_unit_step_with_path(x, zeta, axis, 1.0, Profile::Sine, &fine, &path);
        let b = sde_unit_step_with_path(x, zeta, axis, 1.0, Profile::Sine, &coarse, &path.coarsen(16).unwrap());
        w1 += dist(&a, &b);
    }
    w1 /= n as f64;
    assert!(w1 < 3e-3, "W1 bound {w1}");
}

#[test]
fn separation_perturbation_bound() {
    // On {max|W| ≤ α}: |Δ^κ − Δ⁰| ≤ C1 (α√κ + |x−y|) |Δ⁰|, with C1 fixed once
    // from the mean-value theorem: √2 · A · sup|g''| · C0.
    let a = 1.0;
    let c1 = 2f64.sqrt() * a * (2.0 * PI).powi(2) * gronwall_constants(a, Profile::Sine).c0;
    let mut g = RngStream::new(24, 0);
    let mut worst: f64 = 0.0;
    for &kappa in &[1e-6, 1e-4, 1e-2] {
        let cfg = SdeConfig::new(kappa, 32, DriftSign::Plus).unwrap();
        for _ in 0..10_000 {
            let x = TorusPoint::uniform(&mut g);
            let r = 10f64.powf(-1.0 - 5.0 * g.random::<f64>());
            let th = 2.0 * PI * g.random::<f64>();
            let pair = SeparatedPair::new(x, Displacement::reduce(r * th.cos(), r * th.sin()));
            let zeta: f64 = g.random();
            let path = BrownianPath::sample_full(32, &mut g);
            let alpha = path.running_max().unwrap();
            let noisy = sde_pair_unit_step(&pair, zeta, Axis::Horizontal, a, Profile::Sine, &cfg, &path);
            let clean = pair.shear(zeta, Axis::Horizontal, a, Profile::Sine);
            let diff = Displacement::reduce(noisy.sep.d1 - clean.sep.d1, noisy.sep.d2 - clean.sep.d2).norm();
            let bound = c1 * (alpha * kappa.sqrt() + r) * clean.sep.norm();
            worst = worst.max(diff / bound);
            assert!(diff <= bound, "κ={kappa}: {diff} > {bound}");
        }
    }
    // not vacuous
    assert!(worst > 1e-3, "{worst}");
}

#[test]
fn common_noise_keeps_pairs_rigid_without_shear() {
    let cfg = SdeConfig::with_kappa(1e-2).unwrap();
    let mut g = RngStream::new(25, 0);
    for _ in 0..1000 {
        let x = TorusPoint::uniform(&mut g);
        let y = TorusPoint::uniform(&mut g);
        let s = shearmix::flow::TwoPointState::new(x, y).unwrap();
        let out = two_point_sde_step(&s, g.random(), g.random(), 0.0, Profile::Sine, &cfg, &mut g).unwrap();
        let (d0, d1) = (s.separation(), out.separation());
        assert!((d0.d1 - d1.d1).abs() < 1e-12 && (d0.d2 - d1.d2).abs() < 1e-12);
    }
}

#[test]
fn pulsed_sampler_matches_spectral_propagator() {
    // Start from a narrow Gaussian: the sampler draws initial points from it,
    // the solver evolves it as a density. Compare binned laws after a period.
    const BINS: usize = 16;
    let (n, sigma, kappa, amp) = (256, 0.02, 1e-3, 0.5);
    let (ze, zo) = (0.137, 0.642);
    let center = TorusPoint::from_reduced(0.31, 0.58);
    let solver = SpectralSolver::new(n).unwrap();
    let mut rho = ScalarField::gaussian_bump(n, center, sigma).unwrap();
    solver.pulsed_period_step(&mut rho, ze, zo, kappa, amp, Profile::Sine).unwrap();
    let cell = n / BINS;
    let mut expected = vec![0.0; BINS * BINS];
    for j in 0..n {
        for i in 0..n {
            expected[(j / cell) * BINS + i / cell] += rho.get(i, j) / (n * n) as f64;
        }
    }
    // grid samples sit at the lower-left corner of each cell; shift samples
    // by half a grid spacing so bins line up with the quadrature
    let h = 0.5 / n as f64;
    let samples = 1_000_000;
    let mut g = RngStream::new(26, 0);
    let mut counts = vec![0u64; BINS * BINS];
    for _ in 0..samples {
        let x0 = center.translate(wrapped_gaussian(sigma * sigma, &mut g).unwrap());
        let y = pulsed_step(x0, ze, zo, amp, Profile::Sine, kappa, &mut g).unwrap();
        let y = y.translate(Displacement::reduce(h, h));
        let b = |v: f64| ((v * BINS as f64) as usize).min(BINS - 1);
        counts[b(y.x2()) * BINS + b(y.x1())] += 1;
    }
    let l1: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&c, &e)| (c as f64 / samples as f64 - e).abs())
        .sum();
    assert!(l1 < 0.05, "binned L1 {l1}");
}

#[test]
fn deterministic_limit_of_sde_is_the_shear_map() {
    let mut g = RngStream::new(27, 0);
    let plus = SdeConfig::new(0.0, 4, DriftSign::Plus).unwrap();
    for _ in 0..1000 {
        let x = TorusPoint::uniform(&mut g);
        let z: f64 = g.random();
        assert_eq!(
            sde_unit_step(x, z, Axis::Vertical, 3.0, Profile::PiecewiseLinear, &plus, &mut g),
            shear_step(x, z, Axis::Vertical, 3.0, Profile::PiecewiseLinear)
        );
    }
}
