//! CaF case-study contracts: pulse schemes, contrast, the two-molecule
//! model and the training problem.

use diqcd::caf::*;
use diqcd::dynamics::PulseEvent;
use diqcd::grad::{Quantity, TrainConfig};
use diqcd::models::{simulate_circuits, Circuit, EnsembleConfig};
use diqcd::Error;
use std::f64::consts::FRAC_PI_2;

#[test]
fn plain_contrast_under_static_noise_is_a_sinc() {
    let mut params = CaFParams::noiseless();
    params.static_half_width = 1.5;
    let times = [0.5, 1.0, 2.0, 3.0, 4.0];
    let b = 2048;
    let c = simulate_contrast(&params, Scheme::Plain, &times, b, 4).unwrap();
    for (t, got) in times.iter().zip(&c) {
        let x = params.static_half_width * t;
        let exact = (x.sin() / x).abs();
        // Per-member contrast is |cos(Wut)| ≤ 1, so 4/√B bounds 4σ.
        assert!((got - exact).abs() < 4.0 / (b as f64).sqrt(), "t={t}: {got} vs {exact}");
    }
}

#[test]
fn decoherence_free_contrast_is_one() {
    let c = simulate_contrast(&CaFParams::noiseless(), Scheme::Plain, &[0.0, 1.0, 4.0], 4, 1).unwrap();
    assert!(c.iter().all(|x| (x - 1.0).abs() < 1e-12));
}

#[test]
fn depolarized_state_has_no_contrast() {
    let mut params = CaFParams::noiseless();
    params.pulse_error = 0.75;
    for scheme in [Scheme::Plain, Scheme::Echo, Scheme::Xy8] {
        let times = if scheme == Scheme::Xy8 { vec![1.6, 3.2] } else { vec![1.0, 2.0] };
        let c = simulate_contrast(&params, scheme, &times, 4, 1).unwrap();
        assert!(c.iter().all(|x| x.abs() < 1e-12), "{scheme:?}: {c:?}");
    }
}

#[test]
fn contrast_stays_in_unit_interval() {
    let c = simulate_contrast(&CaFParams::default(), Scheme::Plain, &Scheme::Plain.default_times(), 64, 9).unwrap();
    assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn xy8_times_must_be_whole_blocks() {
    assert!(matches!(scheme_circuits(Scheme::Xy8, &[2.0], None), Err(Error::Schedule(_))));
    assert!(Scheme::parse("ramsey").is_err());
    let pulses = xy8_pulses(0.0, 1.6, 1, &[0], None);
    assert_eq!(pulses.len(), 8);
    assert!((pulses[0].time - 0.1).abs() < 1e-12 && (pulses[7].time - 1.5).abs() < 1e-12);
}

#[test]
fn synthetic_datasets_have_the_expected_shape() {
    let data = synthetic_datasets(&CaFParams::default(), 16, 1).unwrap();
    let counts: Vec<usize> = data.iter().map(|d| d.values.len()).collect();
    assert_eq!(counts, vec![7, 10, 7]);
    let (_, _, p) = one_molecule_model(&CaFParams::default()).unwrap();
    let (ex, spec) = training_problem(p, &data, 0.79, 16).unwrap();
    assert_eq!(ex.len(), 3);
    let dts: Vec<f64> = ex.iter().map(|e| e.dt).collect();
    assert_eq!(dts, vec![0.01, 0.05, 0.1]);
    for (t, w) in spec.terms.iter().zip([1.0 / 7.0, 0.1, 1.0 / 7.0]) {
        assert_eq!(t.weight, w);
        assert!((t.data_scale - 1.0 / 0.79).abs() < 1e-15);
        assert!(matches!(t.quantity, Quantity::AbsDiff(_, _)));
    }
}

#[test]
fn damping_rates_learn_a_hundred_times_slower() {
    let (model, ids, _) = one_molecule_model(&CaFParams::default()).unwrap();
    assert_eq!(model.params.get(ids.gamma_x).lr, Some(0.001));
    assert_eq!(model.params.get(ids.gamma_z).lr, Some(0.001));
    let others: Vec<_> = model.params.iter().filter(|(id, p)| p.flexible && *id != ids.gamma_x && *id != ids.gamma_z).collect();
    assert!(!others.is_empty());
    assert!(others.iter().all(|(_, p)| p.lr.is_none()));
    assert_eq!(TrainConfig::new(200, 0.1, 0).lr / 0.001, 100.0);
}

#[test]
fn training_descends_on_synthetic_data() {
    let truth = CaFParams::default();
    let data = synthetic_datasets(&truth, 64, 2).unwrap();
    let mut init = truth.clone();
    init.line_amplitudes = [0.8, 0.1, 0.2, 0.02];
    init.static_half_width = 1.6;
    let fit = train_caf(&init, &data, &TrainConfig::new(50, 0.1, 3), 32, |_| {}).unwrap();
    let h = &fit.result.history;
    assert!(h[49] <= h[0], "loss went from {} to {}", h[0], h[49]);
}

fn pinned_run(params: &CaFParams, d: f64, t: f64, steps: usize) -> f64 {
    let model = build_two_molecule_model(params, d, true).unwrap();
    let schedule = vec![PulseEvent::new(0.0, 0, [1.0, 0.0, 0.0], FRAC_PI_2, None), PulseEvent::new(0.0, 1, [1.0, 0.0, 0.0], FRAC_PI_2, None)];
    let circuit = Circuit::new("bell", schedule, t, vec![t]);
    let st = simulate_circuits(&model, &[circuit], &EnsembleConfig { batch: 1, dt: t / steps as f64, seed: 0 }).unwrap();
    st[0].mean_of(P_UU).unwrap()[0]
}

#[test]
fn pinned_quarter_period_gives_certain_up_up() {
    let d = 2.0;
    let t = 2.0 * std::f64::consts::PI * d * d * d / J0;
    assert!((pinned_run(&CaFParams::noiseless(), d, t, 5000) - 1.0).abs() < 1e-3);
}

#[test]
fn zero_coupling_gives_no_up_up() {
    let mut params = CaFParams::noiseless();
    params.j0 = 0.0;
    for t in [1.0, 7.0, 20.0] {
        assert!(pinned_run(&params, 2.0, t, 200).abs() < 1e-12);
    }
    let model = build_two_molecule_model(&params, 2.0, true).unwrap();
    let c = bell_circuit(&model, &[0, 1, 2, 3]).unwrap();
    let st = simulate_circuits(&model, &[c], &EnsembleConfig { batch: 1, dt: 0.01, seed: 0 }).unwrap();
    assert!(st[0].mean_of(P_UU).unwrap().iter().all(|p| p.abs() < 1e-12));
}

#[test]
fn separation_at_the_limit_is_accepted() {
    assert!(build_two_molecule_model(&CaFParams::noiseless(), MIN_SEPARATION_UM, true).is_ok());
    assert!(matches!(build_two_molecule_model(&CaFParams::noiseless(), 1.0, false), Err(Error::Regime(_))));
}

fn loss_curve(params: &CaFParams, batch: usize) -> Vec<f64> {
    let model = build_two_molecule_model(params, 2.0, false).unwrap();
    let c = bell_circuit(&model, &[0, 1, 2, 3, 4]).unwrap();
    let st = simulate_circuits(&model, &[c], &EnsembleConfig { batch, dt: 0.01, seed: 8 }).unwrap();
    qubit_loss(&st[0]).unwrap()
}

#[test]
fn no_loss_without_temperature() {
    let mut params = CaFParams::noiseless();
    params.trap.t_radial_uk = 0.0;
    params.trap.t_axial_uk = 0.0;
    assert!(loss_curve(&params, 4).iter().all(|x| *x == 0.0));
}

#[test]
fn deep_traps_hold_their_molecules() {
    let mut params = CaFParams::noiseless();
    params.trap.gate_depth_mk *= 1000.0;
    // the radial frequency grows by √1000, so the MD substep must shrink with it
    assert!(build_two_molecule_model(&params, 2.0, false).is_err());
    params.trap.md_substep_ms /= 40.0;
    assert!(loss_curve(&params, 16).iter().all(|x| *x == 0.0));
}

#[test]
fn loss_fraction_never_decreases() {
    let mut params = CaFParams::noiseless();
    params.trap.gate_depth_mk = 0.02;
    let l = loss_curve(&params, 32);
    assert!(l.windows(2).all(|w| w[1] >= w[0]), "{l:?}");
    let pinned = build_two_molecule_model(&CaFParams::noiseless(), 2.0, true).unwrap();
    let c = bell_circuit(&pinned, &[0, 1]).unwrap();
    let st = simulate_circuits(&pinned, &[c], &EnsembleConfig { batch: 1, dt: 0.01, seed: 0 }).unwrap();
    assert!(qubit_loss(&st[0]).is_err());
}
