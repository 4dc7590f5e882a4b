//! Statistical and differentiability properties of the process catalog.

use diqcd::processes::trap::*;
use diqcd::processes::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DRAWS: usize = 100_000;

fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn periodic_variance_over_random_phases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let phases: Vec<f64> = (0..DRAWS).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let mut s = ProcessState::periodic(1.7, phases);
    step_periodic(&mut s, 1.7, 3.0, 0.37);
    assert!((variance(&s.values) / (1.7f64.powi(2) / 2.0) - 1.0).abs() < 0.02);
}

#[test]
fn periodic_peak_and_zero_amplitude() {
    let mut s = ProcessState::periodic(1.0, vec![0.0]);
    step_periodic(&mut s, 1.0, std::f64::consts::TAU, 0.25);
    assert!((s.values[0] - 1.0).abs() < 1e-15);
    let mut z = ProcessState::periodic(0.0, vec![0.3, 1.1]);
    for _ in 0..10 {
        step_periodic(&mut z, 0.0, 5.0, 0.1);
        assert!(z.values.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn ou_stays_stationary() {
    let (tau, amp) = (0.8, 1.3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = ProcessState::zeros(DRAWS);
    s.values = normals(&mut rng, DRAWS).into_iter().map(|x| amp * x).collect();
    for _ in 0..1000 {
        let xi = normals(&mut rng, DRAWS);
        step_ou(&mut s, tau, amp, 0.05, &xi).unwrap();
    }
    assert!((variance(&s.values) / (amp * amp) - 1.0).abs() < 0.02);
}

#[test]
fn ou_limits() {
    let mut s = ProcessState::zeros(1);
    s.values[0] = 2.0;
    step_ou(&mut s, 0.5, 0.0, 0.1, &[0.9]).unwrap();
    assert!((s.values[0] - 2.0 * (-0.2f64).exp()).abs() < 1e-15);
    step_ou(&mut s, 0.5, 1.5, 1e6, &[0.9]).unwrap();
    assert!((s.values[0] - 1.35).abs() < 1e-15);
}

#[test]
fn static_uniform_variance_and_time_independence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u: Vec<f64> = (0..DRAWS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut s = ProcessState::zeros(DRAWS);
    init_static_uniform(&mut s, 0.6, &u).unwrap();
    assert!((variance(&s.values) / (0.36 / 3.0) - 1.0).abs() < 0.02);
    let mut one = ProcessState::zeros(1);
    init_static_uniform(&mut one, 0.6, &[0.4]).unwrap();
    for _ in 0..1_000_000 {
        step_static(&mut one, 1e-3);
    }
    assert_eq!(one.values[0], 0.24);
    let mut zero = ProcessState::zeros(3);
    init_static_uniform(&mut zero, 0.0, &[0.4, -0.9, 0.1]).unwrap();
    assert!(zero.values.iter().all(|v| *v == 0.0));
}

#[test]
fn white_noise_variance_and_lag_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let amp = 0.7;
    let mut s = ProcessState::zeros(1);
    let mut series = Vec::with_capacity(DRAWS);
    for _ in 0..DRAWS {
        let xi = [rng.sample(StandardNormal)];
        step_white_noise(&mut s, amp, 0.01, &xi).unwrap();
        series.push(s.values[0]);
    }
    assert!((variance(&series) / (amp * amp) - 1.0).abs() < 0.02);
    let m = series.iter().sum::<f64>() / DRAWS as f64;
    let lag: f64 = series.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / (DRAWS - 1) as f64;
    let rho = lag / variance(&series);
    assert!(rho.abs() < 3.0 / (DRAWS as f64).sqrt(), "lag-1 autocorrelation {rho}");
}

#[test]
fn realizations_are_reproducible_from_the_seed() {
    let mut store = ParamStore::new();
    let tau = store.flexible("tau", 0.4, Constraint::Positive).unwrap();
    let amp = store.flexible("amp", 1.1, Constraint::Positive).unwrap();
    let kind = ProcessKind::OrnsteinUhlenbeck { tau, amplitude: amp };
    let run = || {
        let tape = draw_tape(&kind, 500, &mut member_rng(17, 3, 0));
        realize(&kind, &tape, &store, 0.01, 500).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn ou_endpoint_gradient_matches_finite_difference() {
    let kind_for = |store: &mut ParamStore, tau: f64, amp: f64| {
        let t = store.flexible("tau", tau, Constraint::Positive).unwrap();
        let a = store.flexible("amp", amp, Constraint::Positive).unwrap();
        ProcessKind::OrnsteinUhlenbeck { tau: t, amplitude: a }
    };
    let n = 300;
    let mut base = ParamStore::new();
    let kind = kind_for(&mut base, 0.3, 0.9);
    let tape = draw_tape(&kind, n, &mut member_rng(5, 0, 0));
    let mut vbar = vec![0.0; n];
    vbar[n - 1] = 1.0;
    let mut grads = vec![0.0; 2];
    realize_vjp(&kind, &tape, &base, 0.01, &vbar, &mut grads).unwrap();
    let last = |tau: f64, amp: f64| {
        let mut s = ParamStore::new();
        let k = kind_for(&mut s, tau, amp);
        *realize(&k, &tape, &s, 0.01, n).unwrap().last().unwrap()
    };
    let h = 1e-6;
    let fd_tau = (last(0.3 + h, 0.9) - last(0.3 - h, 0.9)) / (2.0 * h);
    let fd_amp = (last(0.3, 0.9 + h) - last(0.3, 0.9 - h)) / (2.0 * h);
    assert!((grads[0] / fd_tau - 1.0).abs() < 1e-6, "{} vs {fd_tau}", grads[0]);
    assert!((grads[1] / fd_amp - 1.0).abs() < 1e-6, "{} vs {fd_amp}", grads[1]);
}

proptest! {
    #[test]
    fn constraint_maps_are_monotone_with_finite_slope(a in -30.0f64..30.0, d in 1e-3f64..5.0) {
        for c in [Constraint::Free, Constraint::Positive, Constraint::UnitInterval, Constraint::Interval(-2.0, 3.0)] {
            prop_assert!(c.to_external(a + d) > c.to_external(a) || c.to_external(a + d) == c.to_external(a) && c != Constraint::Free);
            let s = c.derivative(a);
            prop_assert!(s.is_finite() && s >= 0.0);
        }
    }

    #[test]
    fn constraint_maps_round_trip(x in 1e-3f64..50.0, p in 1e-3f64..0.999) {
        let back = Constraint::Positive.to_external(Constraint::Positive.to_internal(x).unwrap());
        prop_assert!((back - x).abs() <= 1e-12 * x.max(1.0));
        let back = Constraint::UnitInterval.to_external(Constraint::UnitInterval.to_internal(p).unwrap());
        prop_assert!((back - p).abs() <= 1e-12);
    }

    #[test]
    fn longer_tapes_extend_shorter_ones(seed in any::<u64>(), n in 1usize..200, extra in 1usize..200) {
        let mut store = ParamStore::new();
        let amp = store.flexible("amp", 1.0, Constraint::Positive).unwrap();
        let kind = ProcessKind::WhiteNoise { amplitude: amp };
        let short = draw_tape(&kind, n, &mut member_rng(seed, 0, 1));
        let long = draw_tape(&kind, n + extra, &mut member_rng(seed, 0, 1));
        let (NoiseTape::Gaussian { init: a, steps: s }, NoiseTape::Gaussian { init: b, steps: l }) = (short, long) else {
            panic!("gaussian tapes expected")
        };
        prop_assert_eq!(a, b);
        prop_assert_eq!(&s[..], &l[..n]);
    }
}

#[test]
fn trap_force_is_minus_gradient() {
    let field = TrapField::new(1.3, 0.73, 0.781, vec![[0.0; 3], [2.0, 0.0, 0.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let x: [f64; 3] = [rng.random_range(-1.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)];
        let f = trap_force(&field, x);
        let h = 1e-6;
        for k in 0..3 {
            let (mut p, mut m) = (x, x);
            p[k] += h;
            m[k] -= h;
            let fd = -(trap_potential(&field, p) - trap_potential(&field, m)) / (2.0 * h);
            assert!((f[k] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "axis {k}: {} vs {fd}", f[k]);
        }
    }
}

#[test]
fn nearest_trap_examples() {
    let d = 2.0;
    let field = TrapField::new(1.0, 0.73, 0.781, vec![[0.0; 3], [d, 0.0, 0.0]]).unwrap();
    assert_eq!(nearest_trap(&field, [d, 0.0, 0.0]), 1);
    assert_eq!(nearest_trap(&field, [d / 2.0, 0.0, 0.0]), 0);
    assert_eq!(nearest_trap(&field, [0.4 * d, 0.0, 0.0]), 0);
}

#[test]
fn harmonic_equipartition() {
    let field = TrapField::new(1000.0, 0.73, 0.781, vec![[0.0; 3]]).unwrap();
    let (kr, kz) = field.harmonic_stiffness();
    let cfg = LangevinConfig { mass: 1.0, kt: [1.0, 1.0, 1.0], friction: 8.0, substep: 1e-3 };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut state = MdState::thermal(&field, &cfg, &vec![0; 200], &mut rng);
    let (mut sx, mut sz, mut count) = (0.0, 0.0, 0usize);
    for step in 0..20_000 {
        step_langevin_md(&mut state, &field, &cfg, cfg.substep, &mut rng).unwrap();
        if step % 10 == 0 {
            for p in &state.positions {
                sx += p[0] * p[0];
                sz += p[2] * p[2];
                count += 1;
            }
        }
    }
    let (mx, mz) = (sx / count as f64, sz / count as f64);
    assert!((mx * kr - 1.0).abs() < 0.05, "<x²> k_r / kT = {}", mx * kr);
    assert!((mz * kz - 1.0).abs() < 0.05, "<z²> k_z / kT = {}", mz * kz);
}

#[test]
fn cold_langevin_limits() {
    let field = TrapField::new(2.0, 0.73, 0.781, vec![[0.0; 3]]).unwrap();
    let cfg = LangevinConfig { mass: 1.0, kt: [0.0; 3], friction: 50.0, substep: 1e-3 };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = MdState::at_rest(vec![[0.0; 3]]);
    for _ in 0..1000 {
        step_langevin_md(&mut s, &field, &cfg, 1e-3, &mut rng).unwrap();
    }
    assert_eq!(s.positions[0], [0.0; 3]);
    let mut moving = MdState { positions: vec![[0.0; 3]], velocities: vec![[1.0, -2.0, 0.5]], time: 0.0 };
    let strong = LangevinConfig { friction: 1e5, ..cfg };
    for _ in 0..20 {
        step_langevin_md(&mut moving, &field, &strong, 1e-3, &mut rng).unwrap();
    }
    assert!(moving.velocities[0].iter().all(|v| v.abs() < 1e-4), "{:?}", moving.velocities[0]);
}
