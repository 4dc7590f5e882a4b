//! Model assembly and ensemble simulation contracts.

use diqcd::dynamics::{lindblad_step, JumpSpec, PulseEvent};
use diqcd::hilbert::*;
use diqcd::linalg::{c64, hermiticity_error, max_abs_diff, CMatrix};
use diqcd::models::*;
use diqcd::processes::{Constraint, ProcessKind, ProcessSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plus() -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    pure_density(&[c64(s, 0.0), c64(s, 0.0)])
}

/// Qubit with static detuning W·u on S_z plus a periodic drive on S_x.
fn noisy_qubit(w: f64) -> ModelSpec {
    let mut m = ModelSpec::new(spin(Axis::Z).scale(0.4), plus());
    let hw = m.params.flexible("w", w, Constraint::Positive).unwrap();
    let a = m.params.flexible("a", 0.3, Constraint::Positive).unwrap();
    let s = m.add_process(ProcessSpec::new("static", ProcessKind::StaticUniform { half_width: hw }));
    let p = m.add_process(ProcessSpec::new("drive", ProcessKind::Periodic { amplitude: a, omega: 2.0 }));
    m.driven.push(DrivenTerm { coefficient: Coefficient::Process(s), operator: spin(Axis::Z) });
    m.driven.push(DrivenTerm { coefficient: Coefficient::Process(p), operator: spin(Axis::X) });
    m.observables.push(Observable::new("sx", pauli(Axis::X)));
    m.observables.push(Observable::new("p_up", spin_up_projector()));
    m
}

#[test]
fn hamiltonian_assembly_examples() {
    let mut m = ModelSpec::new(pauli(Axis::X), plus());
    let c = m.params.flexible("c", 0.0, Constraint::Free).unwrap();
    let e = m.add_process(ProcessSpec::new("e", ProcessKind::Constant { value: c }));
    m.driven.push(DrivenTerm { coefficient: Coefficient::Process(e), operator: spin(Axis::Z) });
    assert_eq!(assemble_hamiltonian(&m, &[0.0], None).unwrap(), pauli(Axis::X));
    let h = assemble_hamiltonian(&m, &[2.0], None).unwrap();
    assert!(max_abs_diff(h.matrix(), (&pauli(Axis::X) + &pauli(Axis::Z)).unwrap().matrix()) < 1e-15);
    assert!(assemble_hamiltonian(&m, &[f64::NAN], None).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = noisy_qubit(1.0);
    for _ in 0..100 {
        let v = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        assert!(hermiticity_error(assemble_hamiltonian(&q, &v, None).unwrap().matrix()) <= 1e-12);
    }
}

#[test]
fn every_flexible_parameter_is_reachable() {
    let m = noisy_qubit(1.0);
    assert_eq!(m.reachable_params().len(), m.params.flexible_ids().len());
    let mut orphan = noisy_qubit(1.0);
    orphan.params.flexible("unused", 1.0, Constraint::Free).unwrap();
    assert!(orphan.validate().is_err());
}

#[test]
fn same_seed_is_bit_identical() {
    let m = noisy_qubit(1.3);
    let times: Vec<f64> = (0..=10).map(|k| 0.1 * k as f64).collect();
    let a = simulate_ensemble(&m, 16, 1.0, 0.01, &times, 42).unwrap();
    let b = simulate_ensemble(&m, 16, 1.0, 0.01, &times, 42).unwrap();
    assert_eq!(a, b);
    let c = simulate_ensemble(&m, 16, 1.0, 0.01, &times, 43).unwrap();
    assert_ne!(a.mean, c.mean);
}

#[test]
fn means_do_not_depend_on_member_order() {
    let m = noisy_qubit(1.3);
    let times = vec![0.5, 1.0];
    let circuits = [Circuit::new("c", vec![], 1.0, times.clone())];
    let cfg = EnsembleConfig { batch: 32, dt: 0.01, seed: 5 };
    let records = simulate_members(&m, &circuits, &cfg).unwrap();
    let stats = simulate_circuits(&m, &circuits, &cfg).unwrap();
    for (o, _) in m.observables.iter().enumerate() {
        for s in 0..times.len() {
            let rev: f64 = records.iter().rev().map(|r| r.values[0][o * times.len() + s]).sum::<f64>() / 32.0;
            assert!((rev - stats[0].mean[o][s]).abs() < 1e-14);
        }
    }
}

#[test]
fn deterministic_single_member_equals_plain_lindblad_run() {
    let mut m = ModelSpec::new(pauli(Axis::X).scale(0.7), plus());
    let g = m.params.flexible("g", 0.4, Constraint::Positive).unwrap();
    m.jumps.push(JumpSpec::new(spin(Axis::Z), g));
    m.observables.push(Observable::new("p_up", spin_up_projector()));
    let st = simulate_ensemble(&m, 1, 1.0, 0.01, &[1.0], 0).unwrap();
    let mut b = DensityMatrixBatch::new(HilbertSpace::spin_half(), vec![plus()], 0.0).unwrap();
    for _ in 0..100 {
        lindblad_step(&mut b, &[pauli(Axis::X).scale(0.7)], &[(spin(Axis::Z), 0.4)], 0.01).unwrap();
    }
    assert!((st.mean_of("p_up").unwrap()[0] - b.members()[0][(0, 0)].re).abs() < 1e-13);
}

#[test]
fn purity_is_conserved_without_dissipation() {
    let m = noisy_qubit(2.0);
    let circuits = [Circuit::new("c", vec![PulseEvent::new(0.3, 0, [0.0, 1.0, 0.0], 1.0, None)], 2.0, vec![2.0])];
    let cfg = EnsembleConfig { batch: 8, dt: 0.01, seed: 2 };
    let mut q = m.clone();
    q.observables = vec![Observable::new("sx", pauli(Axis::X)), Observable::new("sy", pauli(Axis::Y)), Observable::new("sz", pauli(Axis::Z))];
    for r in simulate_members(&q, &circuits, &cfg).unwrap() {
        let v = &r.values[0];
        let purity = 0.5 * (1.0 + v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        assert!((purity - 1.0).abs() < 1e-8, "purity {purity}");
    }
}

#[test]
fn projector_means_stay_in_unit_interval_and_std_nonnegative() {
    let m = noisy_qubit(3.0);
    let times: Vec<f64> = (0..=20).map(|k| 0.25 * k as f64).collect();
    let st = simulate_ensemble(&m, 64, 5.0, 0.01, &times, 7).unwrap();
    for &p in st.mean_of("p_up").unwrap() {
        assert!((-1e-8..=1.0 + 1e-8).contains(&p));
    }
    assert!(st.std.iter().flatten().all(|s| *s >= 0.0));
}

/// Ramsey coherence under static detuning W·u averages to sin(Wt)/(Wt).
#[test]
fn doubling_the_batch_stays_within_statistical_error() {
    let w = 2.0;
    let mut m = ModelSpec::new(Operator::zeros(&HilbertSpace::spin_half()), plus());
    let hw = m.params.flexible("w", w, Constraint::Positive).unwrap();
    let s = m.add_process(ProcessSpec::new("static", ProcessKind::StaticUniform { half_width: hw }));
    m.driven.push(DrivenTerm { coefficient: Coefficient::Process(s), operator: pauli(Axis::Z).scale(0.5) });
    m.observables.push(Observable::new("sx", pauli(Axis::X)));
    let t = 1.3;
    let exact = (w * t).sin() / (w * t);
    for b in [256, 512] {
        let st = simulate_ensemble(&m, b, t, 0.01, &[t], 19).unwrap();
        let se = st.std_of("sx").unwrap()[0] / (b as f64).sqrt();
        let mean = st.mean_of("sx").unwrap()[0];
        assert!((mean - exact).abs() <= 3.0 * se, "B={b}: {mean} vs {exact} (se {se})");
    }
}
