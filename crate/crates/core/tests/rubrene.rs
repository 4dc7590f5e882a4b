use diqcd::error::Error;
use diqcd::hilbert::Operator;
use diqcd::linalg::{c64, CMatrix, C64};
use diqcd::models::{simulate_ensemble, Observable};
use diqcd::processes::member_rng;
use diqcd::rubrene::*;
use diqcd::units::{CM_INV_TO_RAD_PER_FS, MEV_TO_CM_INV};

/// exp(a) by scaling and squaring with a Taylor core.
fn expm(a: &CMatrix) -> CMatrix {
    let norm: f64 = a.iter().map(|z| z.norm()).sum::<f64>().max(1e-300);
    let s = (norm / 0.25).log2().ceil().max(0.0) as i32;
    let scaled = a * c64(0.5f64.powi(s), 0.0);
    let n = a.nrows();
    let mut out = CMatrix::identity(n, n);
    let mut term = CMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled * c64(1.0 / k as f64, 0.0);
        out += &term;
    }
    for _ in 0..s {
        out = &out * &out;
    }
    out
}

/// Joint spin ⊗ modes Hamiltonian Σω b†b + Σ(gω/2)(b + b†)(1 + σ_z) in
/// rad/fs, spin index 0 = ↑, modes in the given order (last fastest).
fn joint_hamiltonian(modes: &[Mode], n_max: &[usize]) -> CMatrix {
    let dims: Vec<usize> = n_max.iter().map(|n| n + 1).collect();
    let nb: usize = dims.iter().product();
    let dim = 2 * nb;
    let digits = |mut idx: usize| {
        let mut d = vec![0; dims.len()];
        for m in (0..dims.len()).rev() {
            d[m] = idx % dims[m];
            idx /= dims[m];
        }
        d
    };
    let index = |d: &[usize]| d.iter().zip(&dims).fold(0, |acc, (x, n)| acc * n + x);
    let mut h = CMatrix::zeros(dim, dim);
    for s in 0..2 {
        let up = if s == 0 { 1.0 } else { 0.0 };
        for i in 0..nb {
            let d = digits(i);
            let diag: f64 = modes.iter().zip(&d).map(|(m, &n)| m.omega * n as f64).sum();
            h[(s * nb + i, s * nb + i)] += c64(diag, 0.0);
            for (m, mode) in modes.iter().enumerate() {
                if d[m] + 1 < dims[m] {
                    let mut e = d.clone();
                    e[m] += 1;
                    let j = index(&e);
                    // (1 + σ_z) = 2 on ↑, 0 on ↓
                    let v = mode.g * mode.omega * ((d[m] + 1) as f64).sqrt() * up;
                    h[(s * nb + j, s * nb + i)] += c64(v, 0.0);
                    h[(s * nb + i, s * nb + j)] += c64(v, 0.0);
                }
            }
        }
    }
    h * c64(CM_INV_TO_RAD_PER_FS, 0.0)
}

/// ⟨σ_x⟩, ⟨σ_y⟩, ⟨σ_z⟩ on the 1 fs grid from dense joint evolution.
fn joint_oracle(modes: &[Mode], n_max: &[usize], fock: &[usize], phi: f64, samples: usize) -> Vec<[f64; 3]> {
    let h = joint_hamiltonian(modes, n_max);
    let dim = h.nrows();
    let nb = dim / 2;
    let u = expm(&(h * c64(0.0, -1.0)));
    let dims: Vec<usize> = n_max.iter().map(|n| n + 1).collect();
    let k = fock.iter().zip(&dims).fold(0, |acc, (x, n)| acc * n + x);
    let mut psi = nalgebra::DVector::<C64>::zeros(dim);
    psi[k] = c64(phi.sqrt(), 0.0);
    psi[nb + k] = c64((1.0 - phi).sqrt(), 0.0);
    let mut out = Vec::new();
    for _ in 0..samples {
        let mut rho01 = c64(0.0, 0.0);
        let mut pz = 0.0;
        for i in 0..nb {
            rho01 += psi[i] * psi[nb + i].conj();
            pz += psi[i].norm_sqr() - psi[nb + i].norm_sqr();
        }
        out.push([2.0 * rho01.re, -2.0 * rho01.im, pz]);
        psi = &u * &psi;
    }
    out
}

fn check_generator_against_oracle(modes: Vec<Mode>, temperature_k: f64) {
    let cfg = SpinBosonConfig { modes: modes.clone(), batch: 6, ..SpinBosonConfig::default() };
    let n_max = cfg.truncation(temperature_k).unwrap();
    let seed = 11;
    let (t, sx, sy) = spin_boson_trajectories(&cfg, temperature_k, seed).unwrap();
    assert_eq!(t.len(), 100);
    for b in 0..cfg.batch {
        let fock = sample_thermal_fock(temperature_k, &modes, &n_max, &mut member_rng(seed, b as u64, 0)).unwrap();
        let oracle = joint_oracle(&modes, &n_max, &fock, cfg.phi, t.len());
        for (k, o) in oracle.iter().enumerate() {
            assert!((sx[b][k] - o[0]).abs() < 1e-3, "member {b} t {k}: {} vs {}", sx[b][k], o[0]);
            assert!((sy[b][k] - o[1]).abs() < 1e-3, "member {b} t {k}: {} vs {}", sy[b][k], o[1]);
            assert!((o[2] - (2.0 * cfg.phi - 1.0)).abs() < 1e-10);
        }
    }
}

#[test]
fn generator_matches_joint_exponential_one_mode() {
    check_generator_against_oracle(vec![RUBRENE_MODES[0]], 300.0);
}

#[test]
fn generator_matches_joint_exponential_two_modes() {
    check_generator_against_oracle(vec![RUBRENE_MODES[2], RUBRENE_MODES[3]], 300.0);
}

#[test]
fn generator_at_zero_temperature() {
    check_generator_against_oracle(vec![RUBRENE_MODES[1]], 0.0);
}

#[test]
fn dataset_shape_and_decoupled_limit() {
    let mut cfg = SpinBosonConfig::desk();
    cfg.batch = 3;
    cfg.dt_fs = 0.1;
    let data = gen_one_molecule_data(&cfg, 300.0, 1).unwrap();
    assert_eq!(data.t_fs.len(), 100);
    assert_eq!(data.t_fs[99], 99.0);
    assert!((data.mean_sx[0] - 0.6).abs() < 1e-12 && data.mean_sy[0].abs() < 1e-12);
    cfg.modes.iter_mut().for_each(|m| m.g = 0.0);
    let flat = gen_one_molecule_data(&cfg, 300.0, 1).unwrap();
    assert!(flat.mean_sx.iter().all(|x| (x - 0.6).abs() < 1e-10));
    assert!(flat.std_sx.iter().all(|x| x.abs() < 1e-10));
}

#[test]
fn storage_cap_rejects_large_truncations() {
    let cfg = SpinBosonConfig { max_storage: 100, ..SpinBosonConfig::default() };
    assert!(matches!(spin_boson_trajectories(&cfg, 300.0, 0), Err(Error::Truncation(_))));
    let cfg = SpinBosonConfig { n_max: Some(vec![3; 9]), ..SpinBosonConfig::default() };
    assert!(matches!(spin_boson_trajectories(&cfg, 300.0, 0), Err(Error::Truncation(_))));
}

#[test]
fn binding_energy_matches_reference() {
    let lam = polaron_binding(&RUBRENE_MODES);
    assert!((lam - 581.0).abs() < 1.0, "{lam}");
    assert!((lam / (73.0 * MEV_TO_CM_INV) - 1.0).abs() < 0.02);
}

fn sampled_mean(omega: f64, draws: usize, seed: u64) -> (f64, f64) {
    let mode = [Mode { omega, g: 0.0 }];
    let n_max = [truncation_level(omega, 300.0)];
    let mut rng = member_rng(seed, 0, 0);
    let mut sum = 0usize;
    let mut zeros = 0usize;
    for _ in 0..draws {
        let n = sample_thermal_fock(300.0, &mode, &n_max, &mut rng).unwrap()[0];
        sum += n;
        zeros += (n == 0) as usize;
    }
    (sum as f64 / draws as f64, zeros as f64 / draws as f64)
}

#[test]
fn sampler_follows_bose_einstein() {
    // kT = 208.5 cm⁻¹ at 300 K
    let nbar = 1.0 / ((84.0f64 / (0.695_034_800 * 300.0)).exp() - 1.0);
    assert!((thermal_occupation(84.0, 300.0) - nbar).abs() < 1e-12);
    assert!((nbar - 2.04).abs() < 0.03);
    let (mean, _) = sampled_mean(84.0, 100_000, 3);
    assert!((mean / nbar - 1.0).abs() < 0.03, "{mean} vs {nbar}");
    let (_, p0) = sampled_mean(1594.0, 100_000, 3);
    assert!(p0 > 0.999);
}

fn ensemble_coherence(model: &diqcd::models::ModelSpec, times: &[f64], dt: f64) -> Vec<C64> {
    let st = simulate_ensemble(model, 1, *times.last().unwrap(), dt, times, 0).unwrap();
    let (x, y) = (st.mean_of(SX).unwrap(), st.mean_of(SY).unwrap());
    x.iter().zip(y).map(|(a, b)| c64(*a, *b)).collect()
}

#[test]
fn diqcd_dephasing_only() {
    let init = DiqcdParams { epsilon0: 0.0, gamma: 40.0, drives: vec![], phi: 0.1 };
    let model = build_one_molecule_diqcd(&init).unwrap();
    let times: Vec<f64> = (0..=50).map(|k| k as f64).collect();
    let c = ensemble_coherence(&model, &times, 0.005);
    let rate = 40.0 * CM_INV_TO_RAD_PER_FS;
    for (t, z) in times.iter().zip(&c) {
        let exact = 0.6 * (-rate * t / 2.0).exp();
        assert!((z.norm() / exact - 1.0).abs() < 1e-3, "t {t}: {} vs {exact}", z.norm());
    }
}

#[test]
fn diqcd_offset_only_precesses() {
    let init = DiqcdParams { epsilon0: 50.0, gamma: 0.0, drives: vec![], phi: 0.1 };
    let model = build_one_molecule_diqcd(&init).unwrap();
    let times: Vec<f64> = (0..=40).map(|k| k as f64).collect();
    let c = ensemble_coherence(&model, &times, 0.002);
    let w = 2.0 * 50.0 * CM_INV_TO_RAD_PER_FS;
    for (t, z) in times.iter().zip(&c) {
        // ⟨σ_x⟩ + i⟨σ_y⟩ = 2ρ₁₀ = 0.6 e^{+iωt} for H = ε₀σ_z
        let exact = C64::from_polar(0.6, w * t);
        assert!((z - exact).norm() < 1e-3, "t {t}: {z} vs {exact}");
        assert!((z.norm() - 0.6).abs() < 1e-9);
    }
}

#[test]
fn diqcd_without_noise_keeps_coherence() {
    let init = DiqcdParams { epsilon0: 0.0, gamma: 0.0, drives: vec![(84.0, 0.0), (214.0, 0.0)], phi: 0.1 };
    let model = build_one_molecule_diqcd(&init).unwrap();
    let c = ensemble_coherence(&model, &[0.0, 10.0, 20.0], 0.05);
    assert!(c.iter().all(|z| (z - c64(0.6, 0.0)).norm() < 1e-12));
}

#[test]
fn trained_values_round_trip_through_the_model() {
    let init = DiqcdParams { epsilon0: -123.0, gamma: 21.5, drives: vec![(84.0, 147.0), (214.0, 73.0)], phi: 0.1 };
    let back = DiqcdParams::from_model(&build_one_molecule_diqcd(&init).unwrap()).unwrap();
    assert!((back.epsilon0 + 123.0).abs() < 1e-9 && (back.gamma - 21.5).abs() < 1e-9);
    for (a, b) in back.drives.iter().zip(&init.drives) {
        assert!(a.0 == b.0 && (a.1 - b.1).abs() < 1e-9);
    }
}

fn plain_lattice(hopping: f64, gamma: f64, sites: usize) -> diqcd::models::ModelSpec {
    build_lattice_model(&DiqcdParams { epsilon0: 0.0, gamma, drives: vec![], phi: 0.1 }, hopping, sites).unwrap()
}

/// exp(𝓛t) of the dephasing tight-binding chain on column-stacked ρ.
fn lattice_superoperator(hopping: f64, gamma: f64, sites: usize, t: f64) -> CMatrix {
    let k = CM_INV_TO_RAD_PER_FS;
    let mut h = CMatrix::zeros(sites, sites);
    for n in 0..sites - 1 {
        h[(n, n + 1)] = c64(hopping * k, 0.0);
        h[(n + 1, n)] = c64(hopping * k, 0.0);
    }
    let id = CMatrix::identity(sites, sites);
    let mut gen = (id.kronecker(&h) - h.transpose().kronecker(&id)) * c64(0.0, -1.0);
    for n in 0..sites {
        let mut p = CMatrix::zeros(sites, sites);
        p[(n, n)] = c64(1.0, 0.0);
        // D[P]ρ = PρP − ½{P, ρ}
        gen += (p.kronecker(&p) - (id.kronecker(&p) + p.kronecker(&id)) * c64(0.5, 0.0)) * c64(gamma * k, 0.0);
    }
    expm(&(gen * c64(t, 0.0)))
}

#[test]
fn lattice_matches_superoperator_oracle() {
    let (v, g, sites, t) = (300.0, 80.0, 5, 10.0);
    let prop = lattice_superoperator(v, g, sites, t);
    let mut rho0 = nalgebra::DVector::<C64>::zeros(sites * sites);
    rho0[2 * sites + 2] = c64(1.0, 0.0);
    let exact = prop * rho0;
    let pos: f64 = (0..sites).map(|n| n as f64 * exact[n * sites + n].re).sum();
    let pos2: f64 = (0..sites).map(|n| (n * n) as f64 * exact[n * sites + n].re).sum();
    let model = plain_lattice(v, g, sites);
    let mut errors = Vec::new();
    for dt in [2e-3, 1e-3] {
        let st = simulate_ensemble(&model, 1, t, dt, &[t], 0).unwrap();
        let e2 = (st.mean_of(POSITION_SQUARED).unwrap()[0] - pos2).abs();
        assert!((st.mean_of(POSITION).unwrap()[0] - pos).abs() < 1e-8);
        errors.push(e2);
    }
    assert!(errors[1] < 1e-3, "{errors:?}");
    // first-order global error: halving δt halves the error
    assert!(errors[0] / errors[1] > 1.8, "{errors:?}");
}

#[test]
fn ballistic_spreading() {
    // V = 1 rad/fs
    let v = 1.0 / CM_INV_TO_RAD_PER_FS;
    let model = plain_lattice(v, 0.0, 41);
    let times: Vec<f64> = (1..=8).map(|k| 0.5 * k as f64).collect();
    let st = lattice_msd(&model, &times, 1, 1e-4, 0).unwrap();
    for (t, m) in times.iter().zip(&st.msd) {
        let exact = 2.0 * t * t;
        assert!((m / exact - 1.0).abs() < 1e-3, "t {t}: {m} vs {exact}");
    }
    assert!(st.edge_population.iter().all(|e| *e < 1e-6));
    let err = mobility_from_series(
        &lattice_msd(&model, &(0..=20).map(|k| 0.2 * k as f64).collect::<Vec<_>>(), 1, 1e-3, 0).unwrap(),
        300.0,
        7.0,
        &RegimeCriteria::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::NoLinearRegime(_)));
}

fn driven_params() -> DiqcdParams {
    DiqcdParams { epsilon0: 0.0, gamma: 20.0, drives: vec![(84.0, 150.0), (214.0, 70.0)], phi: 0.1 }
}

#[test]
fn frozen_carrier_without_hopping() {
    let model = build_lattice_model(&driven_params(), 0.0, 11).unwrap();
    let st = lattice_msd(&model, &[0.0, 5.0, 10.0, 20.0], 4, 0.05, 3).unwrap();
    assert!(st.msd.iter().all(|m| *m == 0.0));
    assert!(st.mean_position.iter().all(|x| *x == 5.0));
}

#[test]
fn driven_lattice_conserves_population() {
    let mut model = build_lattice_model(&driven_params(), 600.0, 15).unwrap();
    model.observables.push(Observable::new("total", Operator::identity(&model.h0.space().clone())));
    let times: Vec<f64> = (0..=20).map(|k| k as f64).collect();
    let st = simulate_ensemble(&model, 4, 20.0, 0.05, &times, 5).unwrap();
    let total = st.mean_of("total").unwrap();
    let spread = st.std_of("total").unwrap();
    assert!(total.iter().all(|x| (x - 1.0).abs() < 1e-10));
    assert!(spread.iter().all(|x| x.abs() < 1e-10));
}

#[test]
fn dephasing_lattice_stays_centred() {
    let model = plain_lattice(600.0, 40.0, 21);
    let times: Vec<f64> = (0..=30).map(|k| k as f64).collect();
    let st = lattice_msd(&model, &times, 1, 0.02, 0).unwrap();
    assert!(st.mean_position.iter().all(|x| (x - 10.0).abs() < 1e-8));
    assert!(st.msd.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn lattice_size_must_be_odd() {
    assert!(build_lattice_model(&driven_params(), 600.0, 50).is_err());
    assert!(build_lattice_model(&driven_params(), 600.0, 1).is_err());
}

#[test]
fn mobility_of_uniform_spreading() {
    // diffusive MSD = 2 D t with D = 0.05 site²/fs
    let t: Vec<f64> = (0..=100).map(|k| k as f64).collect();
    let y: Vec<f64> = t.iter().map(|x| 0.1 * x + 3.0).collect();
    let series = MsdSeries { t_fs: t.clone(), msd: y.clone(), mean_position: vec![0.0; 101], edge_population: vec![0.0; 101] };
    let rep = mobility_from_series(&series, 300.0, 7.0, &RegimeCriteria::default()).unwrap();
    assert_eq!(rep.window_fs, (60.0, 100.0));
    // e D² slope / (2 k_B T), D = 7e-8 cm, slope 1e14 site²/s
    let expected = 49e-16 * 0.1e15 / (2.0 * 8.617_333_262e-5 * 300.0);
    assert!((rep.mobility / expected - 1.0).abs() < 1e-9);
    let doubled = mobility_from_series(&series, 300.0, 14.0, &RegimeCriteria::default()).unwrap();
    assert!((doubled.mobility / rep.mobility - 4.0).abs() < 1e-12);
    let mut touching = series.clone();
    touching.edge_population[50] = 0.01;
    assert!(matches!(mobility_from_series(&touching, 300.0, 7.0, &RegimeCriteria::default()), Err(Error::NoLinearRegime(_))));
    assert!(mobility_from_series(&series, 0.0, 7.0, &RegimeCriteria::default()).is_err());
}

#[test]
fn uniform_distribution_variance() {
    for sites in [3usize, 7, 51] {
        let rho = CMatrix::from_fn(sites, sites, |i, j| if i == j { c64(1.0 / sites as f64, 0.0) } else { c64(0.0, 0.0) });
        let l = sites as f64;
        assert!((member_msd(&rho) - (l * l - 1.0) / 12.0).abs() < 1e-9);
    }
}
