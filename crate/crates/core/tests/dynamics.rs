use std::f64::consts::PI;

use kam_core::dynamics::*;
use kam_core::freq_analysis::*;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Richardson-extrapolated central difference.
fn deriv(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

#[test]
fn pendulum_chart_round_trip_random_points() {
    let ch = ActionAngleChart::new(Potential::Pendulum, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let h: f64 = rng.gen_range(1e-3..1.9);
        let x_max = (1.0 - h).acos();
        let x = rng.gen_range(-x_max..x_max);
        let p = (2.0 * (h - (1.0 - x.cos()))).sqrt() * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let (phi, i) = ch.to_action_angle(x, p).unwrap();
        let (x2, p2) = ch.from_action_angle(phi, i).unwrap();
        worst = worst.max((x - x2).abs()).max((p - p2).abs());
    }
    assert!(worst <= 1e-9, "{worst:e}");
}

#[test]
fn pendulum_chart_is_symplectic() {
    let ch = ActionAngleChart::new(Potential::Pendulum, None).unwrap();
    for (x, p) in [(0.3, 0.2), (-0.8, 0.5), (1.2, -0.4), (0.05, -1.1), (-1.5, -0.3)] {
        let phi = |x: f64, p: f64| ch.to_action_angle(x, p).unwrap().0;
        let act = |x: f64, p: f64| ch.to_action_angle(x, p).unwrap().1;
        let h = 1e-3;
        let det = deriv(|v| phi(v, p), x, h) * deriv(|v| act(x, v), p, h)
            - deriv(|v| phi(x, v), p, h) * deriv(|v| act(v, p), x, h);
        assert!((det.abs() - 1.0).abs() <= 1e-7, "({x},{p}) det {det}");
    }
}

#[test]
fn fast_chart_jacobian_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = 7.0;
    for _ in 0..50 {
        let x: f64 = rng.gen_range(-3.0..3.0);
        let y: f64 = rng.gen_range(0.1..4.0);
        let p = |x: f64, y: f64| fast_action_angle(w, x, y).unwrap().0;
        let q = |x: f64, y: f64| fast_action_angle(w, x, y).unwrap().1;
        let h = 1e-3;
        let det = deriv(|v| q(v, y), x, h) * deriv(|v| p(x, v), y, h) - deriv(|v| q(x, v), y, h) * deriv(|v| p(v, y), x, h);
        assert!((det.abs() - 1.0).abs() <= 1e-10, "det {det}");
    }
}

#[test]
fn action_constant_along_unforced_orbit() {
    let chain = OscillatorChain {
        n: 1,
        potential: Potential::Pendulum,
        eps: 0.0,
        alpha: 0.5,
        beta: 0.5,
        omega: vec![1.0],
        big_omega: vec![1.0],
    };
    let ch = ActionAngleChart::new(Potential::Pendulum, None).unwrap();
    let opts = IntegrateOptions { stride: 5000, scheme: Scheme::Yoshida4 };
    let tr = integrate_symplectic(&chain, &ExtendedState::at_rest(vec![1.0], vec![0.0]), 1e-2, 1e4, opts).unwrap();
    let i0 = ch.to_action_angle(1.0, 0.0).unwrap().1;
    let dev = tr.states.iter().map(|s| (ch.to_action_angle(s.x[0], s.p[0]).unwrap().1 - i0).abs()).fold(0.0, f64::max);
    assert!(dev <= 1e-8, "{dev:e}");
}

#[test]
fn harmonic_energy_drift_over_long_run() {
    let chain = OscillatorChain {
        n: 1,
        potential: Potential::Harmonic,
        eps: 0.0,
        alpha: 0.5,
        beta: 0.5,
        omega: vec![1.0],
        big_omega: vec![1.0],
    };
    let opts = IntegrateOptions { stride: 100, scheme: Scheme::Strang };
    let tr = integrate_symplectic(&chain, &ExtendedState::at_rest(vec![1.0], vec![0.0]), 1e-3, 1e4, opts).unwrap();
    assert!(energy_drift(&chain, &tr).abs() <= 1e-8);
}

#[test]
fn chain_frequencies_match_chart() {
    let chain = OscillatorChain {
        n: 2,
        potential: Potential::Pendulum,
        eps: 0.0,
        alpha: 0.5,
        beta: 0.5,
        omega: vec![1.0, 1.0],
        big_omega: vec![1.0, 1.0],
    };
    let ch = ActionAngleChart::new(Potential::Pendulum, None).unwrap();
    let init = ExtendedState::at_rest(vec![0.4, 1.1], vec![0.0, 0.2]);
    let (n, sample) = (8192usize, 0.5);
    let dt = sample / 50.0;
    let opts = IntegrateOptions { stride: 50, scheme: Scheme::Yoshida4 };
    let tr = integrate_symplectic(&chain, &init, dt, (n - 1) as f64 * sample, opts).unwrap();
    for i in 0..2 {
        let sig: Vec<Complex64> = tr.states.iter().map(|s| Complex64::new(s.x[i], -s.p[i])).collect();
        let f = extract_frequencies(&sig, sample, 3).unwrap().dominant().unwrap();
        let h = chain.site_energies(&init)[i];
        let f_chart = ch.frequency_of_energy(h).unwrap();
        assert!((f - f_chart).abs() <= 1e-6, "site {i}: {f} vs {f_chart}");
    }
}

#[test]
fn resonant_initial_condition_is_flagged() {
    // quartic stiffening lets one site run at twice the other's frequency
    let pot = Potential::Quartic { c: 0.25 };
    let ch = ActionAngleChart::new(pot.clone(), None).unwrap();
    let h2 = 1e-4;
    let f2 = ch.frequency_of_energy(h2).unwrap();
    let (mut lo, mut hi) = (h2, ch.h_max());
    assert!(ch.frequency_of_energy(hi).unwrap() > 2.0 * f2);
    for _ in 0..100 {
        let m = 0.5 * (lo + hi);
        if ch.frequency_of_energy(m).unwrap() < 2.0 * f2 {
            lo = m;
        } else {
            hi = m;
        }
    }
    let actions = vec![ch.action_of_energy(lo).unwrap(), ch.action_of_energy(h2).unwrap()];
    let chain = OscillatorChain {
        n: 2,
        potential: pot,
        eps: 1e-6,
        alpha: 0.1,
        beta: 0.1,
        omega: vec![1.0, 1.3],
        big_omega: vec![0.7, 0.9],
    };
    let cfg = PersistenceConfig { delta_f: 1e-2, samples: 4096, ..Default::default() };
    let map = persistence_scan(&chain, &[actions], &[1e-6], (1e3, 1e3), &cfg).unwrap();
    let pt = &map.points[0];
    assert_eq!(pt.label, PersistenceLabel::Resonant, "{pt:?}");
    let k = pt.resonance.as_ref().unwrap();
    assert_eq!(k, &vec![1, -2]);
}

#[test]
fn scan_is_deterministic_and_integrable_limit_persists() {
    let chain = OscillatorChain {
        n: 2,
        potential: Potential::Pendulum,
        eps: 0.0,
        alpha: 0.1,
        beta: 0.1,
        omega: vec![1.0, 1.3],
        big_omega: vec![0.7, 0.9],
    };
    let grid = vec![vec![1.0, 2.0], vec![3.0, 1.5]];
    let cfg = PersistenceConfig { delta_f: 1e-2, samples: 2048, ..Default::default() };
    let a = persistence_scan(&chain, &grid, &[0.0, 1e-4], (1e3, 1e3), &cfg).unwrap();
    let b = persistence_scan(&chain, &grid, &[0.0, 1e-4], (1e3, 1e3), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.fraction(0.0, PersistenceLabel::Persistent), 1.0);
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("I1,I2,eps,label,drift,f1,f2\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn pendulum_forced_small_eps_stays_bounded() {
    let (chain, tr) =
        pendulum_fast_forced(0.5, 0.0, 1e-2, 1e-2 / 20.0, 200.0, IntegrateOptions { stride: 100, scheme: Scheme::Strang })
            .unwrap();
    let ch = ActionAngleChart::new(Potential::Pendulum, None).unwrap();
    let acts: Vec<f64> = tr.states.iter().map(|s| ch.to_action_angle(s.x[0], s.p[0]).unwrap().1).collect();
    let spread = acts.iter().cloned().fold(f64::MIN, f64::max) - acts.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 1e-2 * 2.0 * PI, "{spread}");
    assert!(energy_drift(&chain, &tr).abs() < 1e-6);
}
