//! Carrier transport in a Holstein chain: the exact one-molecule
//! spin-boson data generator, the periodic-drive ensemble model fitted to
//! it, its lattice generalization, and the mobility estimate from the
//! mean squared displacement.
//!
//! Energies are in cm⁻¹ and times in fs; Hamiltonians handed to the engine
//! are multiplied by [`CM_INV_TO_RAD_PER_FS`]. Spin basis index 0 is |↑⟩,
//! the state carrying the vibronic coupling.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::JumpSpec;
use crate::error::{Error, Result};
use crate::grad::{train, EpochReport, Experiment, LossPoint, LossSpec, LossTerm, Quantity, TrainConfig, TrainResult};
use crate::hilbert::{
    boson_annihilate, boson_number, lattice_hopping, pauli, pure_density, site_position, site_projector, spin_up_projector,
    Axis, HilbertSpace, Operator,
};
use crate::linalg::{c64, hermitian_propagator, C64, CMatrix};
use crate::models::{simulate_members, Circuit, Coefficient, DrivenTerm, EnsembleConfig, ModelSpec, Observable, TrajectoryStats};
use crate::processes::{member_rng, Constraint, ProcessKind, ProcessSpec};
use crate::units::{kelvin_to_cm_inv, CM_INV_TO_RAD_PER_FS, KB_OVER_E_VOLT_PER_K, MEV_TO_CM_INV};

/// A vibrational mode: frequency ω (cm⁻¹) and dimensionless coupling g.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub omega: f64,
    pub g: f64,
}

/// The nine kept intramolecular modes of Rubrene.
pub const RUBRENE_MODES: [Mode; 9] = [
    Mode { omega: 84.0, g: 0.96 },
    Mode { omega: 214.0, g: 0.37 },
    Mode { omega: 632.0, g: 0.25 },
    Mode { omega: 1002.0, g: 0.20 },
    Mode { omega: 1206.0, g: 0.15 },
    Mode { omega: 1351.0, g: 0.31 },
    Mode { omega: 1364.0, g: 0.13 },
    Mode { omega: 1535.0, g: 0.20 },
    Mode { omega: 1594.0, g: 0.31 },
];

/// Fock-space tail mass allowed beyond the thermal cutoff.
pub const TRUNCATION_TAIL: f64 = 1e-4;
/// Extra Fock levels above the thermal cutoff.
pub const TRUNCATION_HEADROOM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct HolsteinParams {
    /// Transfer integral V (cm⁻¹).
    pub hopping: f64,
    /// Reference polaron binding energy λ (cm⁻¹).
    pub binding: f64,
    pub modes: Vec<Mode>,
    /// Intermolecular distance (Å).
    pub spacing_angstrom: f64,
    pub temperature_k: f64,
}

impl Default for HolsteinParams {
    fn default() -> Self {
        HolsteinParams {
            hopping: 83.0 * MEV_TO_CM_INV,
            binding: 73.0 * MEV_TO_CM_INV,
            modes: RUBRENE_MODES.to_vec(),
            spacing_angstrom: 7.0,
            temperature_k: 300.0,
        }
    }
}

impl HolsteinParams {
    /// Keeps only the modes at `indices` (into [`RUBRENE_MODES`] order).
    pub fn with_modes(mut self, indices: &[usize]) -> Result<Self> {
        let all = self.modes.clone();
        self.modes = indices
            .iter()
            .map(|&i| all.get(i).copied().ok_or_else(|| Error::InvalidArgument(format!("mode index {i} out of range"))))
            .collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidArgument("at least one vibrational mode is required".into()));
        }
        if self.modes.iter().any(|m| !(m.omega > 0.0) || !m.g.is_finite()) {
            return Err(Error::InvalidArgument("mode frequencies must be positive".into()));
        }
        if !(self.temperature_k >= 0.0 && self.temperature_k.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature {} K must be non-negative", self.temperature_k)));
        }
        if !(self.spacing_angstrom > 0.0) {
            return Err(Error::InvalidArgument("intermolecular distance must be positive".into()));
        }
        Ok(())
    }
}

/// λ = Σ_m g_m² ω_m.
pub fn polaron_binding(modes: &[Mode]) -> f64 {
    modes.iter().map(|m| m.g * m.g * m.omega).sum()
}

/// Bose-Einstein occupation 1/(e^{βω} − 1); zero at T = 0.
pub fn thermal_occupation(omega: f64, temperature_k: f64) -> f64 {
    if temperature_k == 0.0 {
        return 0.0;
    }
    1.0 / (omega / kelvin_to_cm_inv(temperature_k)).exp_m1()
}

/// Smallest n with cumulative thermal weight P(≤ n) ≥ 1 − `tail`, plus
/// [`TRUNCATION_HEADROOM`].
pub fn truncation_level(omega: f64, temperature_k: f64) -> usize {
    if temperature_k == 0.0 {
        return TRUNCATION_HEADROOM;
    }
    // P(≤ n) = 1 − e^{−βω(n+1)}
    let beta_omega = omega / kelvin_to_cm_inv(temperature_k);
    let n = ((1.0 / TRUNCATION_TAIL).ln() / beta_omega).ceil() as usize;
    n.saturating_sub(1) + TRUNCATION_HEADROOM
}

/// Thermal weight beyond Fock level `n_max`.
pub fn tail_mass(omega: f64, temperature_k: f64, n_max: usize) -> f64 {
    if temperature_k == 0.0 {
        return 0.0;
    }
    (-(omega / kelvin_to_cm_inv(temperature_k)) * (n_max + 1) as f64).exp()
}

/// Draws |n_1 … n_M⟩ from the thermal law P(n) ∝ e^{−βω n}, truncated and
/// renormalized at `n_max[m]`.
pub fn sample_thermal_fock(temperature_k: f64, modes: &[Mode], n_max: &[usize], rng: &mut impl Rng) -> Result<Vec<usize>> {
    if modes.len() != n_max.len() {
        return Err(Error::Dimension(format!("{} modes but {} truncation levels", modes.len(), n_max.len())));
    }
    if !(temperature_k >= 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature_k} K must be non-negative")));
    }
    modes
        .iter()
        .zip(n_max)
        .map(|(m, &nm)| {
            let tail = tail_mass(m.omega, temperature_k, nm);
            if tail > TRUNCATION_TAIL {
                return Err(Error::Truncation(format!(
                    "mode {} cm⁻¹ truncated at n = {nm} leaves thermal tail {tail:.2e} > {TRUNCATION_TAIL:e}",
                    m.omega
                )));
            }
            if temperature_k == 0.0 {
                return Ok(0);
            }
            // inverse CDF of the geometric law restricted to 0..=nm
            let q = (-(m.omega / kelvin_to_cm_inv(temperature_k))).exp();
            let u: f64 = rng.random();
            let n = ((1.0 - u * (1.0 - q.powi(nm as i32 + 1))).ln() / q.ln()).floor();
            Ok((n.max(0.0) as usize).min(nm))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinBosonConfig {
    pub modes: Vec<Mode>,
    /// Per-mode Fock truncation; chosen from the temperature when `None`.
    pub n_max: Option<Vec<usize>>,
    /// Initial carrier weight φ on |↑⟩.
    pub phi: f64,
    pub batch: usize,
    pub dt_fs: f64,
    /// Samples are taken every femtosecond for t < horizon.
    pub horizon_fs: f64,
    /// Cap on Σ_m (n_max + 1)², the storage of the per-mode propagators.
    pub max_storage: usize,
}

impl Default for SpinBosonConfig {
    fn default() -> Self {
        SpinBosonConfig {
            modes: RUBRENE_MODES.to_vec(),
            n_max: None,
            phi: 0.1,
            batch: 64,
            dt_fs: 0.01,
            horizon_fs: 100.0,
            max_storage: 1 << 20,
        }
    }
}

impl SpinBosonConfig {
    /// Three lowest modes, including the strongly coupled 84 cm⁻¹ mode.
    pub fn desk() -> Self {
        SpinBosonConfig { modes: RUBRENE_MODES[..3].to_vec(), ..Self::default() }
    }

    pub fn sample_times(&self) -> Vec<f64> {
        (0..).map(|k| k as f64).take_while(|&t| t < self.horizon_fs - 1e-9).collect()
    }

    fn steps_per_sample(&self) -> Result<usize> {
        let s = 1.0 / self.dt_fs;
        if !(self.dt_fs > 0.0) || (s - s.round()).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("time step {} fs must divide 1 fs", self.dt_fs)));
        }
        Ok(s.round() as usize)
    }

    pub fn truncation(&self, temperature_k: f64) -> Result<Vec<usize>> {
        let n_max = match &self.n_max {
            Some(n) => {
                if n.len() != self.modes.len() {
                    return Err(Error::Dimension(format!("{} modes but {} truncation levels", self.modes.len(), n.len())));
                }
                n.clone()
            }
            None => self.modes.iter().map(|m| truncation_level(m.omega, temperature_k)).collect(),
        };
        let storage: usize = n_max.iter().map(|n| (n + 1) * (n + 1)).sum();
        if storage > self.max_storage {
            return Err(Error::Truncation(format!("truncated propagators need {storage} entries, cap is {}", self.max_storage)));
        }
        Ok(n_max)
    }
}

/// Displaced-oscillator Hamiltonian ω b†b + gω(b + b†) of the |↑⟩ branch (cm⁻¹).
pub fn displaced_oscillator(mode: Mode, n_max: usize) -> Result<Operator> {
    let b = boson_annihilate(n_max)?;
    let n = boson_number(n_max)?;
    let x = (&b + &b.adjoint())?;
    (&n.scale(mode.omega) + &x.scale(mode.g * mode.omega))?.into_hermitian()
}

/// e^{iωnt}⟨n|e^{−ih↑t}|n⟩ on the 1 fs sample grid: the factor one mode
/// contributes to the carrier coherence when it starts in |n⟩.
fn mode_factor(mode: Mode, n: usize, n_max: usize, dt: f64, steps_per_sample: usize, n_samples: usize) -> Result<Vec<C64>> {
    let h = displaced_oscillator(mode, n_max)?;
    let u = hermitian_propagator(h.matrix(), CM_INV_TO_RAD_PER_FS * dt);
    let mut psi = nalgebra::DVector::<C64>::zeros(n_max + 1);
    psi[n] = c64(1.0, 0.0);
    let mut out = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let t = k as f64;
        out.push(C64::from_polar(1.0, CM_INV_TO_RAD_PER_FS * mode.omega * n as f64 * t) * psi[n]);
        for _ in 0..steps_per_sample {
            psi = &u * &psi;
        }
    }
    Ok(out)
}

/// MEAN and STD (over trajectories) of ⟨σ_x(t)⟩ and ⟨σ_y(t)⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinBosonData {
    pub t_fs: Vec<f64>,
    pub mean_sx: Vec<f64>,
    pub mean_sy: Vec<f64>,
    pub std_sx: Vec<f64>,
    pub std_sy: Vec<f64>,
}

/// Per-trajectory ⟨σ_x(t)⟩, ⟨σ_y(t)⟩ of the effective spin-boson model
/// H = Σ ω_m b†b + Σ (g_m ω_m/2)(b† + b)(1 + σ_z), starting from
/// (√φ|↑⟩ + √(1−φ)|↓⟩) ⊗ |n_1 … n_M⟩ with thermally sampled Fock numbers.
///
/// The Hamiltonian is block diagonal in σ_z and the modes decouple inside
/// each block, so every trajectory's coherence is a product of per-mode
/// factors, each from exact evolution with a δt propagator in the
/// truncated Fock space.
pub fn spin_boson_trajectories(config: &SpinBosonConfig, temperature_k: f64, seed: u64) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if !(temperature_k >= 0.0 && temperature_k.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {temperature_k} K must be non-negative")));
    }
    if !(config.phi >= 0.0 && config.phi <= 1.0) {
        return Err(Error::InvalidArgument(format!("carrier weight φ = {} outside [0, 1]", config.phi)));
    }
    if config.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if config.modes.is_empty() || config.modes.iter().any(|m| !(m.omega > 0.0)) {
        return Err(Error::InvalidArgument("the generator needs modes with positive frequencies".into()));
    }
    let modes = &config.modes;
    let n_max = config.truncation(temperature_k)?;
    let sps = config.steps_per_sample()?;
    let times = config.sample_times();
    let fock: Vec<Vec<usize>> = (0..config.batch)
        .map(|b| sample_thermal_fock(temperature_k, modes, &n_max, &mut member_rng(seed, b as u64, 0)))
        .collect::<Result<_>>()?;

    let mut needed: Vec<(usize, usize)> = fock.iter().flat_map(|f| f.iter().copied().enumerate()).collect();
    needed.sort_unstable();
    needed.dedup();
    let factors: BTreeMap<(usize, usize), Vec<C64>> = needed
        .par_iter()
        .map(|&(m, n)| Ok(((m, n), mode_factor(modes[m], n, n_max[m], config.dt_fs, sps, times.len())?)))
        .collect::<Result<_>>()?;

    let c0 = (config.phi * (1.0 - config.phi)).sqrt();
    let mut sx = Vec::with_capacity(config.batch);
    let mut sy = Vec::with_capacity(config.batch);
    for f in &fock {
        let mut x = Vec::with_capacity(times.len());
        let mut y = Vec::with_capacity(times.len());
        for k in 0..times.len() {
            let mut rho01 = c64(c0, 0.0);
            for (m, &n) in f.iter().enumerate() {
                rho01 *= factors[&(m, n)][k];
            }
            x.push(2.0 * rho01.re);
            y.push(-2.0 * rho01.im);
        }
        sx.push(x);
        sy.push(y);
    }
    Ok((times, sx, sy))
}

/// Ensemble data set of the spin-boson generator at `temperature_k`.
pub fn gen_one_molecule_data(config: &SpinBosonConfig, temperature_k: f64, seed: u64) -> Result<SpinBosonData> {
    let (t_fs, sx, sy) = spin_boson_trajectories(config, temperature_k, seed)?;
    let column = |v: &Vec<Vec<f64>>, k: usize| crate::models::mean_std(v.iter().map(move |r| r[k]));
    let mut data = SpinBosonData { t_fs, mean_sx: vec![], mean_sy: vec![], std_sx: vec![], std_sy: vec![] };
    for k in 0..data.t_fs.len() {
        let (mx, sdx, _) = column(&sx, k);
        let (my, sdy, _) = column(&sy, k);
        data.mean_sx.push(mx);
        data.mean_sy.push(my);
        data.std_sx.push(sdx);
        data.std_sy.push(sdy);
    }
    Ok(data)
}

pub const SX: &str = "sx";
pub const SY: &str = "sy";

/// Trainable energies are stored in units of this many cm⁻¹, so that a fixed
/// Adam step of a few tenths moves them by a few cm⁻¹.
pub const PARAM_UNIT_CM: f64 = 10.0;

fn amplitude_name(mode: Mode) -> String {
    format!("amplitude_{}_x10cm", mode.omega)
}

/// Initial drive amplitude g ω √(2(2n̄ + 1)), matching the thermal variance
/// of g ω (b + b†).
pub fn initial_amplitude(mode: Mode, temperature_k: f64) -> f64 {
    mode.g * mode.omega * (2.0 * (2.0 * thermal_occupation(mode.omega, temperature_k) + 1.0)).sqrt()
}

/// Starting values of the one-molecule ensemble model.
#[derive(Debug, Clone, PartialEq)]
pub struct DiqcdParams {
    /// Energy offset ε₀ (cm⁻¹).
    pub epsilon0: f64,
    /// Dephasing rate γ (cm⁻¹).
    pub gamma: f64,
    /// Fixed frequency and drive amplitude per mode (cm⁻¹).
    pub drives: Vec<(f64, f64)>,
    pub phi: f64,
}

impl DiqcdParams {
    /// ε₀ = −λ/2 over the kept modes, thermal amplitudes, small γ.
    pub fn initial(params: &HolsteinParams) -> Result<Self> {
        params.validate()?;
        Ok(DiqcdParams {
            epsilon0: -0.5 * polaron_binding(&params.modes),
            gamma: 5.0,
            drives: params.modes.iter().map(|m| (m.omega, initial_amplitude(*m, params.temperature_k))).collect(),
            phi: 0.1,
        })
    }

    /// Current values of a model built by [`build_one_molecule_diqcd`].
    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        let get = |name: &str| {
            model.params.id(name).map(|id| PARAM_UNIT_CM * model.params.value(id)).ok_or_else(|| Error::MissingSeries(name.into()))
        };
        let mut drives = Vec::new();
        for p in &model.processes {
            if let ProcessKind::Periodic { amplitude, omega } = p.kind {
                // the process name carries the frequency exactly
                let omega = p.name.strip_prefix("mode_").and_then(|w| w.parse().ok()).unwrap_or(omega / CM_INV_TO_RAD_PER_FS);
                drives.push((omega, PARAM_UNIT_CM * model.params.value(amplitude)));
            }
        }
        let up = model.initial[(0, 0)].re;
        Ok(DiqcdParams { epsilon0: get("epsilon0_x10cm")?, gamma: get("gamma_x10cm")?, drives, phi: up })
    }
}

/// H = ε₀σ_z + Σ_m ½ ε_m(t)(1 + σ_z) with ε_m(t) = A_m sin(ω_m t + φ_m) and
/// the jump (1 + σ_z)/2 at rate γ; ε₀, γ and every A_m are flexible.
pub fn build_one_molecule_diqcd(init: &DiqcdParams) -> Result<ModelSpec> {
    let space = HilbertSpace::spin_half();
    let a = init.phi.sqrt();
    let b = (1.0 - init.phi).sqrt();
    let mut model = ModelSpec::new(Operator::zeros(&space), pure_density(&[c64(a, 0.0), c64(b, 0.0)]));
    let u = PARAM_UNIT_CM;
    let eps0 = model.params.flexible("epsilon0_x10cm", init.epsilon0 / u, Constraint::Free)?;
    let gamma = model.params.flexible("gamma_x10cm", init.gamma / u, Constraint::Positive)?;
    let k = CM_INV_TO_RAD_PER_FS * u;
    let c = model.add_process(ProcessSpec::new("epsilon0", ProcessKind::Constant { value: eps0 }));
    model.driven.push(DrivenTerm { coefficient: Coefficient::Process(c), operator: pauli(Axis::Z).scale(k) });
    let up = spin_up_projector();
    for &(omega, amp) in &init.drives {
        let mode = Mode { omega, g: 0.0 };
        let id = model.params.flexible(&amplitude_name(mode), amp / u, Constraint::Positive)?;
        let p = model.add_process(ProcessSpec::new(
            format!("mode_{omega}"),
            ProcessKind::Periodic { amplitude: id, omega: CM_INV_TO_RAD_PER_FS * omega },
        ));
        model.driven.push(DrivenTerm { coefficient: Coefficient::Process(p), operator: up.scale(k) });
    }
    model.jumps.push(JumpSpec::scaled(up, gamma, k));
    model.observables.push(Observable::new(SX, pauli(Axis::X)));
    model.observables.push(Observable::new(SY, pauli(Axis::Y)));
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RubreneTrainConfig {
    /// Inclusive fit window (fs).
    pub fit_window: (f64, f64),
    pub std_weight: f64,
    pub batch: usize,
    pub dt_fs: f64,
    pub train: TrainConfig,
}

impl Default for RubreneTrainConfig {
    fn default() -> Self {
        RubreneTrainConfig { fit_window: (0.0, 70.0), std_weight: 0.1, batch: 512, dt_fs: 0.05, train: TrainConfig::new(200, 0.3, 0) }
    }
}

fn window_indices(t: &[f64], window: (f64, f64)) -> Vec<usize> {
    (0..t.len()).filter(|&i| t[i] >= window.0 - 1e-9 && t[i] <= window.1 + 1e-9).collect()
}

/// Loss with MEAN terms of weight 1 and STD terms of weight `std_weight`
/// for ⟨σ_x⟩ and ⟨σ_y⟩ inside the fit window.
pub fn training_problem(data: &SpinBosonData, cfg: &RubreneTrainConfig) -> Result<(Experiment, LossSpec)> {
    let idx = window_indices(&data.t_fs, cfg.fit_window);
    if idx.is_empty() {
        return Err(Error::InvalidArgument("fit window contains no data".into()));
    }
    let times: Vec<f64> = idx.iter().map(|&i| data.t_fs[i]).collect();
    let duration = *times.last().unwrap();
    let circuit = Circuit::new("free", Vec::new(), duration, times);
    let term = |q: Quantity, col: &[f64], w: f64| LossTerm {
        experiment: 0,
        quantity: q,
        points: idx.iter().map(|&i| LossPoint { circuit: 0, time: data.t_fs[i], target: col[i] }).collect(),
        weight: w,
        data_scale: 1.0,
    };
    let mut terms = vec![term(Quantity::Mean(SX.into()), &data.mean_sx, 1.0), term(Quantity::Mean(SY.into()), &data.mean_sy, 1.0)];
    if cfg.std_weight != 0.0 {
        terms.push(term(Quantity::Std(SX.into()), &data.std_sx, cfg.std_weight));
        terms.push(term(Quantity::Std(SY.into()), &data.std_sy, cfg.std_weight));
    }
    let exp = Experiment { name: "one-molecule".into(), circuits: vec![circuit], dt: cfg.dt_fs, batch: cfg.batch };
    Ok((exp, LossSpec { terms }))
}

/// Fits the one-molecule ensemble model to spin-boson data.
pub fn train_rubrene(
    init: &DiqcdParams,
    data: &SpinBosonData,
    cfg: &RubreneTrainConfig,
    on_epoch: impl FnMut(&EpochReport),
) -> Result<(ModelSpec, TrainResult)> {
    let mut model = build_one_molecule_diqcd(init)?;
    let (exp, spec) = training_problem(data, cfg)?;
    let result = train(&mut model, &[exp], &spec, &cfg.train, 0, None, on_epoch)?;
    Ok((model, result))
}

/// Model ensemble statistics at the data times.
pub fn simulate_diqcd(model: &ModelSpec, times: &[f64], batch: usize, dt_fs: f64, seed: u64) -> Result<TrajectoryStats> {
    let duration = times.iter().copied().fold(0.0, f64::max);
    crate::models::simulate_ensemble(model, batch, duration, dt_fs, times, seed)
}

/// Mean squared error of the model means of ⟨σ_x⟩ and ⟨σ_y⟩ against the
/// data means over `window`.
pub fn mean_residual(stats: &TrajectoryStats, data: &SpinBosonData, window: (f64, f64)) -> Result<f64> {
    let idx = window_indices(&data.t_fs, window);
    if idx.is_empty() {
        return Err(Error::InvalidArgument("residual window contains no data".into()));
    }
    let (mx, my) = (stats.mean_of(SX)?, stats.mean_of(SY)?);
    let mut acc = 0.0;
    for &i in &idx {
        let s = stats
            .sample_times
            .iter()
            .position(|&t| (t - data.t_fs[i]).abs() < 1e-9)
            .ok_or_else(|| Error::InvalidArgument(format!("no model sample at {} fs", data.t_fs[i])))?;
        acc += (mx[s] - data.mean_sx[i]).powi(2) + (my[s] - data.mean_sy[i]).powi(2);
    }
    Ok(acc / (2 * idx.len()) as f64)
}

/// Sites at each end of the chain watched for boundary contact.
pub const EDGE_SITES: usize = 5;
pub const POSITION: &str = "n";
pub const POSITION_SQUARED: &str = "n2";
pub const EDGE: &str = "edge";

/// H = V Σ(c†_{n+1}c_n + h.c.) + Σ_n Σ_m ε_m⁽ⁿ⁾(t) c†_n c_n with jumps
/// c†_n c_n at rate γ, one carrier starting on the middle site. Every site
/// gets independent realizations of the trained drives.
pub fn build_lattice_model(trained: &DiqcdParams, hopping: f64, sites: usize) -> Result<ModelSpec> {
    if sites % 2 == 0 || sites < 3 {
        return Err(Error::InvalidArgument(format!("lattice size {sites} must be odd and at least 3")));
    }
    let k = CM_INV_TO_RAD_PER_FS;
    let space = HilbertSpace::lattice(sites)?;
    let mid = sites / 2;
    let mut initial = CMatrix::zeros(sites, sites);
    initial[(mid, mid)] = c64(1.0, 0.0);
    let mut model = ModelSpec::new(lattice_hopping(sites, hopping * k)?, initial);
    let u = PARAM_UNIT_CM;
    let gamma = model.params.fixed("gamma_x10cm", trained.gamma / u, Constraint::Positive)?;
    let amps: Vec<_> = trained
        .drives
        .iter()
        .map(|&(omega, a)| Ok((omega, model.params.fixed(&amplitude_name(Mode { omega, g: 0.0 }), a / u, Constraint::Positive)?)))
        .collect::<Result<_>>()?;
    for n in 0..sites {
        let proj = site_projector(sites, n)?;
        let mut terms = Vec::new();
        for &(omega, id) in &amps {
            let p = model.add_process(ProcessSpec::new(
                format!("site{n}_mode_{omega}"),
                ProcessKind::Periodic { amplitude: id, omega: k * omega },
            ));
            terms.push((p, 1.0));
        }
        if !terms.is_empty() {
            model.driven.push(DrivenTerm { coefficient: Coefficient::Linear(terms), operator: proj.scale(k * u) });
        }
        model.jumps.push(JumpSpec::scaled(proj, gamma, k * u));
    }
    let x = site_position(sites)?;
    let x2 = (&x * &x)?.into_hermitian()?;
    let edge_diag: Vec<f64> = (0..sites).map(|n| if n < EDGE_SITES || n + EDGE_SITES >= sites { 1.0 } else { 0.0 }).collect();
    model.observables.push(Observable::new(POSITION, x));
    model.observables.push(Observable::new(POSITION_SQUARED, x2));
    model.observables.push(Observable::new(EDGE, Operator::diagonal(&space, &edge_diag)?));
    Ok(model)
}

/// Tr(ρn²) − Tr(ρn)² of one single-carrier density matrix (site² units).
pub fn member_msd(rho: &CMatrix) -> f64 {
    let (mut m1, mut m2) = (0.0, 0.0);
    for n in 0..rho.nrows() {
        let p = rho[(n, n)].re;
        m1 += n as f64 * p;
        m2 += (n * n) as f64 * p;
    }
    (m2 - m1 * m1).max(0.0)
}

/// Per-member MSD and its batch average.
pub fn msd(batch: &crate::hilbert::DensityMatrixBatch) -> (Vec<f64>, f64) {
    let per: Vec<f64> = batch.members().iter().map(member_msd).collect();
    let avg = per.iter().sum::<f64>() / per.len().max(1) as f64;
    (per, avg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsdSeries {
    pub t_fs: Vec<f64>,
    /// Batch-averaged MSD (site²).
    pub msd: Vec<f64>,
    /// Batch-averaged ⟨n⟩.
    pub mean_position: Vec<f64>,
    /// Largest population found on the outer sites at each time.
    pub edge_population: Vec<f64>,
}

/// Propagates the lattice ensemble and reports ⟨Tr(ρn²) − Tr²(ρn)⟩.
pub fn lattice_msd(model: &ModelSpec, sample_times: &[f64], batch: usize, dt_fs: f64, seed: u64) -> Result<MsdSeries> {
    let (ix, ix2, ie) = (
        model.observable_index(POSITION).ok_or_else(|| Error::MissingSeries(POSITION.into()))?,
        model.observable_index(POSITION_SQUARED).ok_or_else(|| Error::MissingSeries(POSITION_SQUARED.into()))?,
        model.observable_index(EDGE).ok_or_else(|| Error::MissingSeries(EDGE.into()))?,
    );
    let duration = sample_times.iter().copied().fold(0.0, f64::max);
    let circuit = Circuit::new("lattice", model.schedule.clone(), duration, sample_times.to_vec());
    let records = simulate_members(model, &[circuit], &EnsembleConfig { batch, dt: dt_fs, seed })?;
    let ns = sample_times.len();
    let mut out = MsdSeries {
        t_fs: sample_times.to_vec(),
        msd: vec![0.0; ns],
        mean_position: vec![0.0; ns],
        edge_population: vec![0.0; ns],
    };
    for r in &records {
        let v = &r.values[0];
        for s in 0..ns {
            let x = v[ix * ns + s];
            out.msd[s] += (v[ix2 * ns + s] - x * x).max(0.0);
            out.mean_position[s] += x;
            out.edge_population[s] = out.edge_population[s].max(v[ie * ns + s]);
        }
    }
    let b = records.len() as f64;
    out.msd.iter_mut().for_each(|x| *x /= b);
    out.mean_position.iter_mut().for_each(|x| *x /= b);
    Ok(out)
}

/// Ordinary least squares y = a + b t with its R².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

pub fn linear_fit(t: &[f64], y: &[f64]) -> Result<LinearFit> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::InvalidArgument("a linear fit needs at least three matching points".into()));
    }
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|x| (x - mt).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(x, v)| (x - mt) * (v - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("a linear fit needs distinct times".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let ss_res: f64 = t.iter().zip(y).map(|(x, v)| (v - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit { intercept, slope, r_squared })
}

/// Limits of the linear-regime detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeCriteria {
    /// Fraction of the horizon, counted from the end, used for the fit.
    pub window_fraction: f64,
    pub min_r_squared: f64,
    /// Largest allowed population on the outer sites.
    pub max_edge_population: f64,
    /// Largest allowed relative change between the slopes of the two
    /// halves of the window; R² alone accepts t² growth on a short window.
    pub max_slope_drift: f64,
}

impl Default for RegimeCriteria {
    fn default() -> Self {
        RegimeCriteria { window_fraction: 0.4, min_r_squared: 0.99, max_edge_population: 1e-3, max_slope_drift: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityReport {
    /// µ in cm²/(V·s).
    pub mobility: f64,
    /// d(MSD)/dt in site²/fs.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window_fs: (f64, f64),
    pub temperature_k: f64,
    pub spacing_angstrom: f64,
}

/// µ = e D² (d MSD/dt) / (2 k_B T), with the slope in site²/fs and D in Å.
pub fn mobility_from_slope(slope: f64, temperature_k: f64, spacing_angstrom: f64) -> Result<f64> {
    if !(temperature_k > 0.0) {
        return Err(Error::InvalidArgument(format!("mobility needs T > 0, got {temperature_k} K")));
    }
    let d_cm = spacing_angstrom * 1e-8;
    Ok(d_cm * d_cm * slope * 1e15 / (2.0 * KB_OVER_E_VOLT_PER_K * temperature_k))
}

/// Fits the MSD over `window` and converts the slope to a mobility. Fails
/// with [`Error::NoLinearRegime`] when the growth is not linear there.
pub fn mobility(
    t_fs: &[f64],
    msd: &[f64],
    temperature_k: f64,
    spacing_angstrom: f64,
    window: (f64, f64),
    criteria: &RegimeCriteria,
) -> Result<MobilityReport> {
    let idx = window_indices(t_fs, window);
    let t: Vec<f64> = idx.iter().map(|&i| t_fs[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| msd[i]).collect();
    if t.len() < 6 {
        return Err(Error::NoLinearRegime(format!("window {window:?} fs holds only {} samples", t.len())));
    }
    let fit = linear_fit(&t, &y)?;
    if !(fit.r_squared >= criteria.min_r_squared) {
        return Err(Error::NoLinearRegime(format!("R² = {:.4} below {}", fit.r_squared, criteria.min_r_squared)));
    }
    let h = t.len() / 2;
    let first = linear_fit(&t[..=h], &y[..=h])?.slope;
    let second = linear_fit(&t[h..], &y[h..])?.slope;
    let drift = (second - first).abs() / fit.slope.abs().max(f64::MIN_POSITIVE);
    if drift > criteria.max_slope_drift {
        return Err(Error::NoLinearRegime(format!(
            "MSD slope changes by {:.1}% across the window (growth is not linear)",
            100.0 * drift
        )));
    }
    if !(fit.slope > 0.0) {
        return Err(Error::NoLinearRegime(format!("MSD slope {} is not positive", fit.slope)));
    }
    Ok(MobilityReport {
        mobility: mobility_from_slope(fit.slope, temperature_k, spacing_angstrom)?,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        window_fs: window,
        temperature_k,
        spacing_angstrom,
    })
}

/// Mobility of a lattice run: fit over the last part of the horizon after
/// checking the carrier never reached the chain ends.
pub fn mobility_from_series(series: &MsdSeries, temperature_k: f64, spacing_angstrom: f64, criteria: &RegimeCriteria) -> Result<MobilityReport> {
    let edge = series.edge_population.iter().copied().fold(0.0, f64::max);
    if edge > criteria.max_edge_population {
        return Err(Error::NoLinearRegime(format!(
            "carrier population {edge:.2e} reached the outer {EDGE_SITES} sites; use a longer chain"
        )));
    }
    let end = series.t_fs.iter().copied().fold(0.0, f64::max);
    let window = (end * (1.0 - criteria.window_fraction), end);
    mobility(&series.t_fs, &series.msd, temperature_k, spacing_angstrom, window, criteria)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ZERO;
    use rand::SeedableRng;

    #[test]
    fn binding_energy_from_modes() {
        assert_eq!(polaron_binding(&[Mode { omega: 100.0, g: 1.0 }]), 100.0);
        let lam = polaron_binding(&RUBRENE_MODES);
        let doubled: Vec<Mode> = RUBRENE_MODES.iter().map(|m| Mode { omega: m.omega, g: 2.0 * m.g }).collect();
        assert!((polaron_binding(&doubled) - 4.0 * lam).abs() < 1e-9);
    }

    #[test]
    fn zero_temperature_samples_ground_state() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = sample_thermal_fock(0.0, &RUBRENE_MODES, &[2; 9], &mut rng).unwrap();
        assert!(n.iter().all(|&x| x == 0));
    }

    #[test]
    fn short_truncation_is_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let err = sample_thermal_fock(300.0, &RUBRENE_MODES[..1], &[3], &mut rng).unwrap_err();
        assert!(matches!(err, Error::Truncation(_)));
        let n = truncation_level(84.0, 300.0);
        assert!(tail_mass(84.0, 300.0, n - TRUNCATION_HEADROOM) <= TRUNCATION_TAIL);
        assert!(tail_mass(84.0, 300.0, n - TRUNCATION_HEADROOM - 1) > TRUNCATION_TAIL);
    }

    #[test]
    fn uncoupled_modes_keep_coherence() {
        let mut cfg = SpinBosonConfig::desk();
        cfg.modes.iter_mut().for_each(|m| m.g = 0.0);
        cfg.batch = 4;
        cfg.horizon_fs = 20.0;
        cfg.dt_fs = 0.1;
        let (_, sx, sy) = spin_boson_trajectories(&cfg, 300.0, 2).unwrap();
        for (x, y) in sx.iter().zip(&sy) {
            assert!(x.iter().all(|v| (v - 0.6).abs() < 1e-10));
            assert!(y.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn mobility_unit_conversion() {
        // 0.01 site²/fs at D = 7 Å and 300 K
        let mu = mobility_from_slope(0.01, 300.0, 7.0).unwrap();
        let expected = (7e-8f64).powi(2) * 0.01e15 / (2.0 * 8.617_333_262e-5 * 300.0);
        assert!((mu / expected - 1.0).abs() < 1e-12);
        assert!((mobility_from_slope(0.01, 300.0, 14.0).unwrap() / mu - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ballistic_growth_is_rejected() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        let y: Vec<f64> = t.iter().map(|x| 2.0 * x * x).collect();
        let err = mobility(&t, &y, 300.0, 7.0, (60.0, 100.0), &RegimeCriteria::default()).unwrap_err();
        assert!(matches!(err, Error::NoLinearRegime(_)));
        let lin: Vec<f64> = t.iter().map(|x| 0.02 * x + 1.0).collect();
        let rep = mobility(&t, &lin, 300.0, 7.0, (60.0, 100.0), &RegimeCriteria::default()).unwrap();
        assert!((rep.slope - 0.02).abs() < 1e-12 && rep.r_squared > 0.999999);
    }

    #[test]
    fn localized_and_uniform_msd() {
        let mut rho = CMatrix::zeros(7, 7);
        rho[(3, 3)] = c64(1.0, 0.0);
        assert_eq!(member_msd(&rho), 0.0);
        let u = CMatrix::from_fn(7, 7, |i, j| if i == j { c64(1.0 / 7.0, 0.0) } else { ZERO });
        assert!((member_msd(&u) - (49.0 - 1.0) / 12.0).abs() < 1e-12);
    }
}
