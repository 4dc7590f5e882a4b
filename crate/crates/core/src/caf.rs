//! Tweezer-trapped molecular qubits: one-molecule Ramsey, spin-echo and XY8
//! decoherence models, the two-molecule dipolar Bell protocol, and the
//! joint fit of the one-molecule noise model to contrast data.
//!
//! Time is in ms and energies in rad/ms. Spin basis index 0 is |↑⟩.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::dynamics::{equatorial_axis, JumpSpec, PulseEvent};
use crate::error::{Error, Result};
use crate::grad::{train, Experiment, LossPoint, LossSpec, LossTerm, Quantity, TrainConfig, TrainResult};
use crate::hilbert::{embed, ket_up, pure_density, spin, tensor, tensor_state, Axis, HilbertSpace, Operator};
use crate::linalg::{c64, CMatrix};
use crate::models::{
    dipolar_scalar, simulate_circuits, Circuit, Coefficient, DrivenTerm, EnsembleConfig, ModelSpec, Motion,
    Observable, PositionCoupling, TrajectoryStats,
};
use crate::processes::trap::{LangevinConfig, TrapField, Vec3};
use crate::processes::{Constraint, ParamId, ParamStore, ProcessKind, ProcessSpec};
use crate::units::{hz_to_rad_per_ms, kelvin_to_md_energy, CAF_MASS_AMU};

/// Dipolar coupling constant, 1942.3 s⁻¹·µm³ expressed in rad/ms·µm³.
pub const J0: f64 = 1.9423;
/// Smallest tweezer separation the two-molecule model accepts (µm).
pub const MIN_SEPARATION_UM: f64 = 1.68;
pub const XY8_BLOCK_ONE_QUBIT_MS: f64 = 1.6;
pub const XY8_BLOCK_TWO_QUBIT_MS: f64 = 3.2;
/// Mains frequency of the line noise harmonics (Hz).
pub const LINE_FREQUENCY_HZ: f64 = 60.0;
/// Quantization axis of the dipolar interaction.
pub const QUANTIZATION_AXIS: Vec3 = [0.0, 1.0, 0.0];

/// XY8 π-pulse axes within one block.
const XY8_AXES: [Axis; 8] = [Axis::X, Axis::Y, Axis::X, Axis::Y, Axis::Y, Axis::X, Axis::Y, Axis::X];

#[derive(Debug, Clone, PartialEq)]
pub struct TrapSettings {
    /// Central depth during the two-qubit gate (mK).
    pub gate_depth_mk: f64,
    /// Full trap depth (mK).
    pub max_depth_mk: f64,
    pub waist_um: f64,
    pub wavelength_um: f64,
    pub t_radial_uk: f64,
    pub t_axial_uk: f64,
    pub damping_ms: f64,
    /// Langevin integrator substep (ms).
    pub md_substep_ms: f64,
}

impl Default for TrapSettings {
    fn default() -> Self {
        TrapSettings {
            gate_depth_mk: 0.13,
            max_depth_mk: 1.28,
            waist_um: 0.73,
            wavelength_um: 0.781,
            t_radial_uk: 6.0,
            t_axial_uk: 18.0,
            damping_ms: 100.0,
            md_substep_ms: 5e-4,
        }
    }
}

impl TrapSettings {
    /// Two tweezers separated by `d` µm along x at the gate depth.
    pub fn field(&self, d: f64) -> Result<TrapField> {
        TrapField::new(
            kelvin_to_md_energy(self.gate_depth_mk * 1e-3),
            self.waist_um,
            self.wavelength_um,
            vec![[0.0; 3], [d, 0.0, 0.0]],
        )
    }

    pub fn langevin(&self) -> LangevinConfig {
        let kr = kelvin_to_md_energy(self.t_radial_uk * 1e-6);
        let ka = kelvin_to_md_energy(self.t_axial_uk * 1e-6);
        LangevinConfig { mass: CAF_MASS_AMU, kt: [kr, kr, ka], friction: 1.0 / self.damping_ms, substep: self.md_substep_ms }
    }
}

/// Noise-model and device parameters. `Default` is the documented
/// synthetic ground truth used for self-consistency tests. Its OU term is
/// weak (A²τ ≪ γ_z): a short-memory OU process dephases exactly like γ_z
/// on the sampled time scales, so a strong one would make γ_z
/// unidentifiable from contrast data.
#[derive(Debug, Clone, PartialEq)]
pub struct CaFParams {
    /// Amplitudes of the 60, 120, 180, 240 Hz line-noise harmonics (rad/ms).
    pub line_amplitudes: [f64; 4],
    pub ou_tau: f64,
    pub ou_amplitude: f64,
    pub static_half_width: f64,
    pub gamma_x: f64,
    pub gamma_z: f64,
    pub pulse_error: f64,
    /// State-preparation fidelity ς relating model to measured probabilities.
    pub fidelity: f64,
    pub j0: f64,
    pub trap: TrapSettings,
    /// Learning rate for the damping rates.
    pub rate_lr: f64,
    /// Whether the two molecules share one set of noise parameters.
    pub shared_noise: bool,
}

impl Default for CaFParams {
    fn default() -> Self {
        CaFParams {
            line_amplitudes: [0.5, 0.2, 0.1, 0.05],
            ou_tau: 2.0,
            ou_amplitude: 0.02,
            static_half_width: 1.0,
            gamma_x: 0.002,
            gamma_z: 0.04,
            pulse_error: 0.002,
            fidelity: 0.79,
            j0: J0,
            trap: TrapSettings::default(),
            rate_lr: 0.001,
            shared_noise: true,
        }
    }
}

impl CaFParams {
    /// Everything switched off: no noise, no dissipation, ideal pulses.
    pub fn noiseless() -> Self {
        CaFParams {
            line_amplitudes: [0.0; 4],
            ou_amplitude: 0.0,
            static_half_width: 0.0,
            gamma_x: 0.0,
            gamma_z: 0.0,
            pulse_error: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = self.line_amplitudes.iter().chain([
            &self.ou_amplitude,
            &self.static_half_width,
            &self.gamma_x,
            &self.gamma_z,
        ]);
        for v in nonneg {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("CaF amplitude or rate {v} must be non-negative")));
            }
        }
        if !(self.ou_tau > 0.0) {
            return Err(Error::InvalidArgument("OU correlation time must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pulse_error) {
            return Err(Error::InvalidArgument(format!("pulse error {} outside [0, 1)", self.pulse_error)));
        }
        if !(self.fidelity > 0.0 && self.fidelity <= 1.0) {
            return Err(Error::InvalidArgument(format!("fidelity {} outside (0, 1]", self.fidelity)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Plain,
    Echo,
    Xy8,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Plain => "plain",
            Scheme::Echo => "echo",
            Scheme::Xy8 => "xy8",
        }
    }

    /// Integration step used for this scheme's fit (ms).
    pub fn dt(self) -> f64 {
        match self {
            Scheme::Plain => 0.01,
            Scheme::Echo => 0.05,
            Scheme::Xy8 => 0.1,
        }
    }

    /// Weight of this scheme's term in the joint loss.
    pub fn loss_weight(self) -> f64 {
        match self {
            Scheme::Plain | Scheme::Xy8 => 1.0 / 7.0,
            Scheme::Echo => 1.0 / 10.0,
        }
    }

    /// Free-evolution times of the synthetic datasets (ms).
    pub fn default_times(self) -> Vec<f64> {
        match self {
            Scheme::Plain => vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
            Scheme::Echo => vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 14.0, 18.0, 24.0, 30.0],
            Scheme::Xy8 => [1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 24.0].iter().map(|k| k * XY8_BLOCK_ONE_QUBIT_MS).collect(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Scheme::Plain),
            "echo" => Ok(Scheme::Echo),
            "xy8" => Ok(Scheme::Xy8),
            _ => Err(Error::InvalidArgument(format!("unknown pulse scheme `{s}`"))),
        }
    }
}

fn axis_vec(a: Axis) -> [f64; 3] {
    match a {
        Axis::X => [1.0, 0.0, 0.0],
        Axis::Y => [0.0, 1.0, 0.0],
        Axis::Z => [0.0, 0.0, 1.0],
    }
}

fn on_slots(time: f64, slots: &[usize], axis: [f64; 3], angle: f64, p: Option<ParamId>) -> Vec<PulseEvent> {
    slots.iter().map(|&s| PulseEvent::new(time, s, axis, angle, p)).collect()
}

/// XY8 π pulses of `blocks` consecutive blocks starting at `start`.
pub fn xy8_pulses(start: f64, block: f64, blocks: usize, slots: &[usize], p: Option<ParamId>) -> Vec<PulseEvent> {
    let tau = block / 8.0;
    let mut out = Vec::new();
    for b in 0..blocks {
        for (j, a) in XY8_AXES.iter().enumerate() {
            let t = start + b as f64 * block + 0.5 * tau + j as f64 * tau;
            out.extend(on_slots(t, slots, axis_vec(*a), PI, p));
        }
    }
    out
}

/// Pulses of one scheme with free-evolution time `t` (ms), excluding the
/// final readout pulse.
pub fn scheme_schedule(scheme: Scheme, t: f64, slots: &[usize], p: Option<ParamId>, block: f64) -> Vec<PulseEvent> {
    let mut ev = on_slots(0.0, slots, [1.0, 0.0, 0.0], FRAC_PI_2, p);
    match scheme {
        Scheme::Plain => {}
        Scheme::Echo => ev.extend(on_slots(0.5 * t, slots, [0.0, 1.0, 0.0], PI, p)),
        Scheme::Xy8 => ev.extend(xy8_pulses(0.0, block, (t / block + 1e-9).floor() as usize, slots, p)),
    }
    ev
}

/// Readout R_{n(θ)}(−π/2) with n(θ) = (cos θ, sin θ, 0): θ = 0 undoes the
/// opening π/2 pulse, θ = π completes a π rotation.
pub fn readout_pulse(theta: f64, slot: usize, p: Option<ParamId>) -> PulseEvent {
    PulseEvent::new(0.0, slot, equatorial_axis(theta), -FRAC_PI_2, p)
}

/// Circuits that produce the data points of `scheme` at `times`. Plain and
/// XY8 share one trajectory per member; echo needs one circuit per time.
pub fn scheme_circuits(scheme: Scheme, times: &[f64], p: Option<ParamId>) -> Result<Vec<Circuit>> {
    let t_max = times.iter().copied().fold(0.0, f64::max);
    match scheme {
        Scheme::Plain => Ok(vec![Circuit::new("plain", scheme_schedule(scheme, t_max, &[0], p, 0.0), t_max, times.to_vec())]),
        Scheme::Xy8 => {
            let block = XY8_BLOCK_ONE_QUBIT_MS;
            for &t in times {
                let k = t / block;
                if (k - k.round()).abs() > 1e-9 {
                    return Err(Error::Schedule(format!("XY8 time {t} ms is not a whole number of {block} ms blocks")));
                }
            }
            Ok(vec![Circuit::new("xy8", scheme_schedule(scheme, t_max, &[0], p, block), t_max, times.to_vec())])
        }
        Scheme::Echo => Ok(times
            .iter()
            .map(|&t| Circuit::new(format!("echo@{t}"), scheme_schedule(scheme, t, &[0], p, 0.0), t, vec![t]))
            .collect()),
    }
}

pub const P_UP_PI: &str = "p_up_pi";
pub const P_UP_ZERO: &str = "p_up_0";
pub const P_UU: &str = "p_uu";

/// Parameter handles of a noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseIds {
    pub line: [ParamId; 4],
    pub ou_tau: ParamId,
    pub ou_amplitude: ParamId,
    pub static_half_width: ParamId,
    pub gamma_x: ParamId,
    pub gamma_z: ParamId,
}

fn register_noise(store: &mut ParamStore, params: &CaFParams, prefix: &str) -> Result<NoiseIds> {
    let name = |s: &str| format!("{prefix}{s}");
    let mut line = [ParamId(0); 4];
    for (l, a) in params.line_amplitudes.iter().enumerate() {
        line[l] = store.flexible(&name(&format!("line_amplitude_{}_rad_per_ms", l + 1)), *a, Constraint::Positive)?;
    }
    let ou_tau = store.flexible(&name("ou_tau_ms"), params.ou_tau, Constraint::Positive)?;
    let ou_amplitude = store.flexible(&name("ou_amplitude_rad_per_ms"), params.ou_amplitude, Constraint::Positive)?;
    let static_half_width = store.flexible(&name("static_half_width_rad_per_ms"), params.static_half_width, Constraint::Positive)?;
    let gamma_x = store.flexible(&name("gamma_x_per_ms"), params.gamma_x, Constraint::Positive)?;
    let gamma_z = store.flexible(&name("gamma_z_per_ms"), params.gamma_z, Constraint::Positive)?;
    store.set_lr(gamma_x, params.rate_lr);
    store.set_lr(gamma_z, params.rate_lr);
    Ok(NoiseIds { line, ou_tau, ou_amplitude, static_half_width, gamma_x, gamma_z })
}

/// Adds the six detuning processes of one molecule and returns their indices.
fn add_noise_processes(model: &mut ModelSpec, ids: &NoiseIds, tag: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for (l, &a) in ids.line.iter().enumerate() {
        let omega = hz_to_rad_per_ms(LINE_FREQUENCY_HZ * (l + 1) as f64);
        out.push(model.add_process(ProcessSpec::new(format!("{tag}line{}", l + 1), ProcessKind::Periodic { amplitude: a, omega })));
    }
    out.push(model.add_process(ProcessSpec::new(
        format!("{tag}ou"),
        ProcessKind::OrnsteinUhlenbeck { tau: ids.ou_tau, amplitude: ids.ou_amplitude },
    )));
    out.push(model.add_process(ProcessSpec::new(format!("{tag}static"), ProcessKind::StaticUniform { half_width: ids.static_half_width })));
    out
}

fn pulse_error_param(store: &mut ParamStore, params: &CaFParams) -> Result<ParamId> {
    if params.pulse_error == 0.0 {
        store.fixed("pulse_error", 0.0, Constraint::Free)
    } else {
        store.flexible("pulse_error", params.pulse_error, Constraint::UnitInterval)
    }
}

/// One-molecule model H = Σ_j ε_j(t) S_z with jumps {S_x, S_z}, initial
/// state |↑⟩ and two readout observables (θ = π and θ = 0) evaluated on the
/// same trajectory.
pub fn one_molecule_model(params: &CaFParams) -> Result<(ModelSpec, NoiseIds, ParamId)> {
    params.validate()?;
    let space = HilbertSpace::spin_half();
    let mut model = ModelSpec::new(Operator::zeros(&space), pure_density(&ket_up()));
    let ids = register_noise(&mut model.params, params, "")?;
    let p = pulse_error_param(&mut model.params, params)?;
    let procs = add_noise_processes(&mut model, &ids, "");
    model.driven.push(DrivenTerm {
        coefficient: Coefficient::Linear(procs.iter().map(|&i| (i, 1.0)).collect()),
        operator: spin(Axis::Z),
    });
    model.jumps.push(JumpSpec::new(spin(Axis::X), ids.gamma_x));
    model.jumps.push(JumpSpec::new(spin(Axis::Z), ids.gamma_z));
    let up = crate::hilbert::spin_up_projector();
    model.observables.push(Observable::with_readout(P_UP_PI, up.clone(), vec![readout_pulse(PI, 0, Some(p))]));
    model.observables.push(Observable::with_readout(P_UP_ZERO, up, vec![readout_pulse(0.0, 0, Some(p))]));
    Ok((model, ids, p))
}

/// One-molecule model with the schedule of `scheme` for free evolution
/// time `t` and a single observable `p_up` read out at phase `theta_last`.
pub fn build_one_molecule_model(params: &CaFParams, scheme: Scheme, theta_last: f64, t: f64) -> Result<ModelSpec> {
    let (mut model, _, p) = one_molecule_model(params)?;
    let up = crate::hilbert::spin_up_projector();
    model.observables = vec![Observable::with_readout("p_up", up, vec![readout_pulse(theta_last, 0, Some(p))])];
    model.schedule = scheme_schedule(scheme, t, &[0], Some(p), XY8_BLOCK_ONE_QUBIT_MS);
    Ok(model)
}

/// C(t) = |P↑(t, π) − P↑(t, 0)| from statistics carrying both readouts.
pub fn contrast(stats: &TrajectoryStats) -> Result<Vec<f64>> {
    let a = stats.mean_of(P_UP_PI)?;
    let b = stats.mean_of(P_UP_ZERO)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect())
}

/// Simulated contrast of `scheme` at `times`.
pub fn simulate_contrast(params: &CaFParams, scheme: Scheme, times: &[f64], batch: usize, seed: u64) -> Result<Vec<f64>> {
    let (model, _, p) = one_molecule_model(params)?;
    let circuits = scheme_circuits(scheme, times, Some(p))?;
    let stats = simulate_circuits(&model, &circuits, &EnsembleConfig { batch, dt: scheme.dt(), seed })?;
    let mut out = Vec::with_capacity(times.len());
    for st in &stats {
        out.extend(contrast(st)?);
    }
    Ok(out)
}

/// J = (J0/r³)(1 − 3cos²θ′) with θ′ measured from the y axis.
pub fn dipole_coupling(r1: Vec3, r2: Vec3, j0: f64) -> Result<f64> {
    dipolar_scalar(r1, r2, j0, QUANTIZATION_AXIS)
}

/// Two molecules in tweezers `d` µm apart along x, coupled by
/// J(r1, r2)(S1x S2x + S1y S2y). With `pinned` the molecules sit at the
/// tweezer centers; otherwise they follow thermal Langevin dynamics and
/// lost members are excluded from the statistics.
pub fn build_two_molecule_model(params: &CaFParams, d: f64, pinned: bool) -> Result<ModelSpec> {
    params.validate()?;
    if !(d >= MIN_SEPARATION_UM) {
        return Err(Error::Regime(format!(
            "tweezer separation {d} µm is below {MIN_SEPARATION_UM} µm, where the model does not apply"
        )));
    }
    let space = HilbertSpace::spins(2);
    let up = ket_up();
    let psi = tensor_state(&[&up, &up]);
    let mut model = ModelSpec::new(Operator::zeros(&space), pure_density(&psi));
    let ids1 = register_noise(&mut model.params, params, "")?;
    let ids2 = if params.shared_noise { ids1 } else { register_noise(&mut model.params, params, "molecule2_")? };
    let p = pulse_error_param(&mut model.params, params)?;
    for (slot, ids) in [(0usize, ids1), (1, ids2)] {
        let procs = add_noise_processes(&mut model, &ids, &format!("m{}_", slot + 1));
        model.driven.push(DrivenTerm {
            coefficient: Coefficient::Linear(procs.iter().map(|&i| (i, 1.0)).collect()),
            operator: embed(&spin(Axis::Z), &space, slot)?,
        });
        model.jumps.push(JumpSpec::new(embed(&spin(Axis::X), &space, slot)?, ids.gamma_x));
        model.jumps.push(JumpSpec::new(embed(&spin(Axis::Z), &space, slot)?, ids.gamma_z));
    }
    let sx = spin(Axis::X);
    let sy = spin(Axis::Y);
    let flip_flop = (&tensor(&[&sx, &sx])? + &tensor(&[&sy, &sy])?)?.into_hermitian()?;
    let field = params.trap.field(d)?;
    if !pinned {
        // BAOAB is unstable for ω·δt ≥ 2; keep a wide margin.
        let omega = (field.harmonic_stiffness().0 / CAF_MASS_AMU).sqrt();
        if omega * params.trap.md_substep_ms > 0.5 {
            return Err(Error::InvalidArgument(format!(
                "MD substep {} ms is too coarse for a radial trap frequency of {:.1} rad/ms",
                params.trap.md_substep_ms, omega
            )));
        }
    }
    let motion = if pinned { Motion::Pinned } else { Motion::Langevin(params.trap.langevin()) };
    model.coupling = Some(PositionCoupling {
        operator: flip_flop,
        j0: params.j0,
        quantization_axis: QUANTIZATION_AXIS,
        trap: field,
        motion,
        initial_traps: [0, 1],
    });
    let mut uu = CMatrix::zeros(4, 4);
    uu[(0, 0)] = c64(1.0, 0.0);
    let uu = Operator::hermitian(space, uu)?;
    let readout = on_slots(0.0, &[0, 1], [1.0, 0.0, 0.0], FRAC_PI_2, Some(p));
    model.observables.push(Observable::with_readout(P_UU, uu, readout));
    Ok(model)
}

/// Bell-protocol circuit: π/2 about x on both qubits, XY8 blocks of
/// 3.2 ms, readout after `blocks_at` whole blocks.
pub fn bell_circuit(model: &ModelSpec, blocks_at: &[usize]) -> Result<Circuit> {
    let p = model.params.id("pulse_error");
    let max_blocks = blocks_at.iter().copied().max().unwrap_or(0);
    let mut schedule = on_slots(0.0, &[0, 1], [1.0, 0.0, 0.0], FRAC_PI_2, p);
    schedule.extend(xy8_pulses(0.0, XY8_BLOCK_TWO_QUBIT_MS, max_blocks, &[0, 1], p));
    let times: Vec<f64> = blocks_at.iter().map(|&k| k as f64 * XY8_BLOCK_TWO_QUBIT_MS).collect();
    Ok(Circuit::new("bell", schedule, max_blocks as f64 * XY8_BLOCK_TWO_QUBIT_MS, times))
}

/// Ideal P↑↑(t) = sin²(J0 t / (4 d³)) for molecules pinned along x.
pub fn ideal_bell_probability(j0: f64, d: f64, t: f64) -> f64 {
    (j0 * t / (4.0 * d * d * d)).sin().powi(2)
}

/// Fraction of members in which a molecule changed tweezer, per sample time.
pub fn qubit_loss(stats: &TrajectoryStats) -> Result<Vec<f64>> {
    stats
        .lost_fraction
        .clone()
        .ok_or_else(|| Error::InvalidArgument("qubit loss requires molecular dynamics".into()))
}

/// Contrast data of one scheme: (t_ms, C^EXP).
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastData {
    pub scheme: Scheme,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Experiments and loss of the joint three-scheme fit: data are divided by
/// ς and compared with the model contrast, with scheme weights 1/7, 1/10
/// and 1/7.
pub fn training_problem(p: ParamId, data: &[ContrastData], fidelity: f64, batch: usize) -> Result<(Vec<Experiment>, LossSpec)> {
    let mut experiments = Vec::new();
    let mut terms = Vec::new();
    for (e, d) in data.iter().enumerate() {
        if d.times.len() != d.values.len() || d.times.is_empty() {
            return Err(Error::InvalidArgument(format!("{} data need matching non-empty times and values", d.scheme.name())));
        }
        let circuits = scheme_circuits(d.scheme, &d.times, Some(p))?;
        let points = d
            .times
            .iter()
            .zip(&d.values)
            .enumerate()
            .map(|(i, (&t, &v))| LossPoint { circuit: if d.scheme == Scheme::Echo { i } else { 0 }, time: t, target: v })
            .collect();
        terms.push(LossTerm {
            experiment: e,
            quantity: Quantity::AbsDiff(P_UP_PI.into(), P_UP_ZERO.into()),
            points,
            weight: d.scheme.loss_weight(),
            data_scale: 1.0 / fidelity,
        });
        experiments.push(Experiment { name: d.scheme.name().into(), circuits, dt: d.scheme.dt(), batch });
    }
    Ok((experiments, LossSpec { terms }))
}

/// Synthetic measured contrast ς·C(t) of every scheme at its default times.
pub fn synthetic_datasets(truth: &CaFParams, batch: usize, seed: u64) -> Result<Vec<ContrastData>> {
    [Scheme::Plain, Scheme::Echo, Scheme::Xy8]
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let times = s.default_times();
            let c = simulate_contrast(truth, s, &times, batch, crate::processes::mix_seed(seed, i as u64))?;
            Ok(ContrastData { scheme: s, times, values: c.iter().map(|x| truth.fidelity * x).collect() })
        })
        .collect()
}

/// Reads the current noise-model values back out of a trained model.
pub fn params_from_model(model: &ModelSpec, base: &CaFParams) -> CaFParams {
    let get = |name: &str, default: f64| model.params.id(name).map(|id| model.params.value(id)).unwrap_or(default);
    let mut out = base.clone();
    for l in 0..4 {
        out.line_amplitudes[l] = get(&format!("line_amplitude_{}_rad_per_ms", l + 1), base.line_amplitudes[l]);
    }
    out.ou_tau = get("ou_tau_ms", base.ou_tau);
    out.ou_amplitude = get("ou_amplitude_rad_per_ms", base.ou_amplitude);
    out.static_half_width = get("static_half_width_rad_per_ms", base.static_half_width);
    out.gamma_x = get("gamma_x_per_ms", base.gamma_x);
    out.gamma_z = get("gamma_z_per_ms", base.gamma_z);
    out.pulse_error = get("pulse_error", base.pulse_error);
    out
}

#[derive(Debug, Clone)]
pub struct CaFFit {
    pub params: CaFParams,
    pub model: ModelSpec,
    pub result: TrainResult,
}

/// Fits one noise model jointly to the plain, echo and XY8 contrast data,
/// starting from `init`. The damping rates use `init.rate_lr`; every other
/// parameter uses `cfg.lr`.
pub fn train_caf(
    init: &CaFParams,
    data: &[ContrastData],
    cfg: &TrainConfig,
    batch: usize,
    on_epoch: impl FnMut(&crate::grad::EpochReport),
) -> Result<CaFFit> {
    let (mut model, _, p) = one_molecule_model(init)?;
    let (experiments, spec) = training_problem(p, data, init.fidelity, batch)?;
    let result = train(&mut model, &experiments, &spec, cfg, 0, None, on_epoch)?;
    Ok(CaFFit { params: params_from_model(&model, init), model, result })
}
