use std::f64::consts::PI;

use kaclab_core::ch::*;
use kaclab_core::noise::NoiseStream;
use kaclab_core::{Field, Trajectory};
use num_complex::Complex64;

fn wavy(n: usize) -> Field {
    Field::from_fn(n, |x| 0.6 * (2.0 * PI * x).cos() + 0.3 * (6.0 * PI * x).sin() + 0.1).unwrap()
}

fn every_step(mut p: CHParams) -> CHParams {
    let dt = p.default_dt();
    p.snapshots = (p.t_final / dt).round() as usize;
    p.dt = Some(p.t_final / p.snapshots as f64);
    p
}

#[test]
fn free_energy_decreases_each_step_without_noise() {
    for a in [-1.0, 1.0] {
        let p = every_step(CHParams::new(a, NoiseMode::Off, 0.01, 32));
        let s = ChSolver::new(&p).unwrap();
        let tr = s.run(&wavy(32), None, None).unwrap();
        let d = s.surface_tension();
        let e: Vec<f64> = tr.fields().iter().map(|u| free_energy(u, a, d).unwrap()).collect();
        for w in e.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "a = {a}: {} -> {}", w[0], w[1]);
        }
        assert!(e.last().unwrap() < &e[0]);

        // half-dt rerun lands on the same energies
        let mut q = p.clone();
        q.dt = Some(p.dt.unwrap() / 2.0);
        let fine = ChSolver::new(&q).unwrap().run(&wavy(32), None, None).unwrap();
        let ef = free_energy(fine.last().unwrap(), a, d).unwrap();
        let rel = (ef - e.last().unwrap()).abs() / (e[0] - e.last().unwrap()).abs();
        assert!(rel < 0.05, "half-dt energy mismatch {rel}");
    }
}

#[test]
fn mass_conserved_every_step_under_noise() {
    for noise in [
        NoiseMode::White,
        NoiseMode::Mollified {
            delta: 0.1,
            base_radius: 0.4,
        },
    ] {
        let p = every_step(CHParams::new(-1.0, noise, 0.002, 64));
        let tr = ChSolver::new(&p)
            .unwrap()
            .run(&wavy(64), Some(&NoiseStream::new(5, 0, 21)), None)
            .unwrap();
        let m: Vec<f64> = tr.fields().iter().map(|u| u.mean()).collect();
        for w in m.windows(2) {
            assert!((w[1] - w[0]).abs() < 1e-10);
        }
    }
}

#[test]
fn ou_update_reaches_stationary_variance() {
    let p = CHParams::new(
        -1.0,
        NoiseMode::Mollified {
            delta: 0.1,
            base_radius: 0.4,
        },
        1.0,
        64,
    );
    let d = p.surface_tension().unwrap();
    let stream = NoiseStream::new(11, 0, 21);
    for k in [1i64, 3] {
        let kap = 2.0 * PI * k as f64;
        let lam = 0.5 * d * kap.powi(4);
        let dt = 1.0 / lam;
        let mult = p.multipliers().unwrap().unwrap()[k as usize];
        let target = kap * kap * mult * mult / lam;
        let mut z = Complex64::default();
        let mut acc = 0.0;
        let steps = 10_000;
        for step in 0..steps + 100 {
            let g = Complex64::new(stream.gaussian(step, 1), stream.gaussian(step, 2)) / 2f64.sqrt();
            z = ou_mode_update(z, k, &p, g, dt).unwrap();
            if step >= 100 {
                acc += z.norm_sqr();
            }
        }
        let var = acc / steps as f64;
        assert!((var / target - 1.0).abs() < 0.05, "k = {k}: {var} vs {target}");
    }
}

#[test]
fn ou_statistics_do_not_depend_on_dt() {
    // second moments after time T from steps dt and dt/2, over 1e4 samples
    let p = CHParams::new(-1.0, NoiseMode::White, 1.0, 32);
    let k = 2i64;
    let kap = 2.0 * PI * k as f64;
    let lam = 0.5 * p.surface_tension().unwrap() * kap.powi(4);
    let t = 0.5 / lam;
    let second_moment = |steps: u64| {
        let dt = t / steps as f64;
        let mut acc = 0.0;
        for r in 0..10_000u64 {
            let s = NoiseStream::new(3 + steps, r, 10);
            let mut z = Complex64::new(0.1, 0.0);
            for st in 0..steps {
                let g = Complex64::new(s.gaussian(st, 3), s.gaussian(st, 4)) / 2f64.sqrt();
                z = ou_mode_update(z, k, &p, g, dt).unwrap();
            }
            acc += z.norm_sqr();
        }
        acc / 10_000.0
    };
    let exact = 0.01 * (-2.0 * lam * t).exp() + kap * kap * (1.0 - (-2.0 * lam * t).exp()) / lam;
    let (a, b) = (second_moment(4), second_moment(8));
    assert!((a / b - 1.0).abs() < 0.05, "{a} vs {b}");
    assert!((a / exact - 1.0).abs() < 0.05);
}

/// Adaptive Simpson, independent of the library's dyadic panels.
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simp(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (simp(f, a, m), simp(f, m, b));
        if depth == 0 || (l + r - whole).abs() < 15.0 * tol {
            return l + r + (l + r - whole) / 15.0;
        }
        rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
    }
    rec(f, a, b, simp(f, a, b), tol, 40)
}

#[test]
fn parseval_closed_form_matches_quadrature() {
    let s = parseval_gradient_integral(1.0, 64, ParsevalConvention::Integer).unwrap();
    assert!((s.closed_form - s.quadrature).abs() < 1e-8, "{s:?}");
    let oracle: f64 = (1..=64)
        .map(|k| {
            let (k2, k4) = ((k * k) as f64, (k as f64).powi(4));
            adaptive(&|t: f64| k2 * (-2.0 * k4 * t).exp(), 0.0, 1.0, 1e-12)
        })
        .sum();
    assert!((oracle - s.closed_form).abs() < 1e-8);

    let d = 0.0125;
    let m = parseval_gradient_integral(1.0, 64, ParsevalConvention::Model { d }).unwrap();
    assert!(
        (m.closed_form - m.quadrature).abs() < 1e-8 * m.closed_form.max(1.0),
        "{m:?}"
    );
}

#[test]
fn parseval_sum_increases_and_saturates() {
    let limit: f64 = (1..=16).map(|k| 1.0 / (2.0 * (k * k) as f64)).sum();
    let mut prev = 0.0;
    for t in [0.001, 0.01, 0.1, 1.0, 20.0] {
        let s = parseval_gradient_integral(t, 16, ParsevalConvention::Integer)
            .unwrap()
            .closed_form;
        assert!(s > prev && s <= limit + 1e-15);
        prev = s;
    }
    assert!((prev - limit).abs() < 1e-12);
}

#[test]
fn parseval_monte_carlo_matches_mode_sum() {
    let streams: Vec<NoiseStream> = (0..200).map(|r| NoiseStream::new(17, r, 32)).collect();
    let t = 0.1;
    let mc = parseval_monte_carlo(t, 32, ParsevalConvention::Integer, &streams, 4).unwrap();
    let s = parseval_gradient_integral(t, 32, ParsevalConvention::Integer).unwrap();
    assert!((mc.mean / s.closed_form - 1.0).abs() < 0.1, "{mc:?} vs {s:?}");
}

fn l2l2(a: &Trajectory, b: &Trajectory) -> f64 {
    a.l2l2_distance(b).unwrap()
}

#[test]
fn decomposition_without_noise_is_the_direct_run() {
    let mut p = CHParams::new(-1.0, NoiseMode::White, 0.01, 32);
    p.snapshots = 5;
    let s = ChSolver::new(&p).unwrap();
    let stream = NoiseStream::new(1, 0, 10).zeroed();
    let dec = s.decompose(&wavy(32), Some(&stream)).unwrap();
    let direct = s.run(&wavy(32), Some(&stream), None).unwrap();
    assert_eq!(dec.z.sup_norm(), 0.0);
    for (w, u) in dec.w.fields().iter().zip(direct.fields()) {
        assert_eq!(w.values(), u.values());
    }
}

#[test]
fn decomposition_tracks_direct_run_within_halving_error() {
    let mut p = CHParams::new(
        -1.0,
        NoiseMode::Mollified {
            delta: 0.1,
            base_radius: 0.4,
        },
        0.02,
        64,
    );
    p.snapshots = 10;
    let stream = NoiseStream::new(23, 0, 21);
    let coarse = ChSolver::new(&p).unwrap().with_noise_substeps(2).unwrap();
    let direct = coarse.run(&wavy(64), Some(&stream), None).unwrap();
    let dec = coarse.decompose(&wavy(64), Some(&stream)).unwrap();
    let mut q = p.clone();
    q.dt = Some(coarse.dt() / 2.0);
    let fine = ChSolver::new(&q).unwrap().run(&wavy(64), Some(&stream), None).unwrap();
    let halving = l2l2(&direct, &fine);
    let split = l2l2(&dec.w.add(&dec.z).unwrap(), &direct);
    assert!(halving > 0.0);
    assert!(split <= 5.0 * halving, "split {split} vs halving {halving}");
}

#[test]
fn ou_splitting_scheme_returns_the_sum() {
    let mut p = CHParams::new(-1.0, NoiseMode::White, 0.005, 32);
    p.snapshots = 5;
    p.scheme = ChScheme::OuSplitting;
    let stream = NoiseStream::new(2, 1, 10);
    let s = ChSolver::new(&p).unwrap();
    let sum = s.run(&wavy(32), Some(&stream), None).unwrap();
    let dec = s.decompose(&wavy(32), Some(&stream)).unwrap();
    assert_eq!(l2l2(&sum, &dec.w.add(&dec.z).unwrap()), 0.0);
    assert!(sum.mass_drift() < 1e-10);
}

#[test]
fn stochastic_convolution_fourth_moment_bounded_across_delta() {
    let mut moments = Vec::new();
    for noise in [
        NoiseMode::White,
        NoiseMode::Mollified {
            delta: 0.1,
            base_radius: 0.4,
        },
        NoiseMode::Mollified {
            delta: 0.01,
            base_radius: 0.4,
        },
    ] {
        let mut p = CHParams::new(-1.0, noise, 0.05, 64);
        p.snapshots = 10;
        p.dt = Some(1e-4);
        let s = ChSolver::new(&p).unwrap();
        let mut acc = 0.0;
        for r in 0..10 {
            let dec = s
                .decompose(&Field::zeros(64).unwrap(), Some(&NoiseStream::new(8, r, 21)))
                .unwrap();
            let w = kaclab_core::trajectory::trapezoid_weights(dec.z.times());
            acc += dec
                .z
                .fields()
                .iter()
                .zip(&w)
                .map(|(z, w)| w * z.values().iter().map(|v| v.powi(4)).sum::<f64>() / 64.0)
                .sum::<f64>();
        }
        moments.push(acc / 10.0);
    }
    let max = moments.iter().cloned().fold(0.0, f64::max);
    let min = moments.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(max.is_finite() && max / min < 10.0, "{moments:?}");
}

#[test]
fn mollification_gap_shrinks_with_delta_and_matches_closed_form() {
    let mut p = CHParams::new(-1.0, NoiseMode::White, 0.05, 128);
    p.k_trunc = Some(32);
    p.dt = Some(2.5e-4);
    let streams: Vec<NoiseStream> = (0..200).map(|r| NoiseStream::new(4, r, 32)).collect();
    let mut prev = f64::INFINITY;
    for delta in [0.2, 0.1, 0.05] {
        let g = noise_mollification_gap(&p, delta, &streams).unwrap();
        assert!(g.closed_form < prev);
        prev = g.closed_form;
        assert!(
            (g.monte_carlo.mean / g.closed_form - 1.0).abs() < 0.1,
            "delta {delta}: {g:?}"
        );
    }
    let zero: Vec<NoiseStream> = streams[..3].iter().map(|s| s.zeroed()).collect();
    assert_eq!(noise_mollification_gap(&p, 0.1, &zero).unwrap().monte_carlo.mean, 0.0);
}

#[test]
fn params_round_trip_through_json() {
    let mut p = CHParams::new(
        -0.5,
        NoiseMode::Mollified {
            delta: 0.05,
            base_radius: 0.4,
        },
        0.3,
        128,
    );
    p.scheme = ChScheme::OuSplitting;
    let text = serde_json::to_string(&p).unwrap();
    assert_eq!(serde_json::from_str::<CHParams>(&text).unwrap(), p);
    assert!(
        serde_json::from_str::<CHParams>(r#"{"a":1,"noise":{"kind":"off"},"t_final":1,"n":32,"bogus":1}"#).is_err()
    );
}
