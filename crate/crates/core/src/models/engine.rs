//! Per-member forward and reverse sweeps over a pulse schedule.
//!
//! The time grid is t_k = kδt, k = 0..=N. At grid point k the sweep applies
//! the pulses scheduled there, records the samples taken there, and then
//! (for k < N) takes Lindblad step k with coefficients evaluated at the step
//! midpoint.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{dipolar_scalar, ModelSpec, Motion, TrajectoryStats};
use crate::dynamics::{CompiledPulse, LindbladKernel, PulseEvent, Workspace};
use crate::error::{Error, Result};
use crate::linalg::{flat, CMatrix, C64, ZERO};
use crate::processes::trap::{nearest_trap, step_langevin_md, MdState};
use crate::processes::{draw_tape, member_rng, realize, realize_vjp, NoiseTape};

/// Stream id reserved for molecular dynamics; process p uses stream p.
const MD_STREAM: u64 = 1 << 40;

/// Relative tolerance for sample times to sit on the grid.
const GRID_TOL: f64 = 1e-9;

/// A pulse sequence and the times at which observables are recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub name: String,
    pub schedule: Vec<PulseEvent>,
    pub duration: f64,
    pub sample_times: Vec<f64>,
}

impl Circuit {
    pub fn new(name: impl Into<String>, schedule: Vec<PulseEvent>, duration: f64, sample_times: Vec<f64>) -> Self {
        Circuit { name: name.into(), schedule, duration, sample_times }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub batch: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Grid index of time `t`, accepting only exact grid points.
pub fn grid_index(t: f64, dt: f64, n_steps: usize) -> Result<usize> {
    let k = (t / dt).round();
    if !(k >= 0.0) || k as usize > n_steps || (t - k * dt).abs() > GRID_TOL * dt.max(t.abs()) {
        return Err(Error::Schedule(format!("sample time {t} is not a grid point of δt = {dt} within [0, {}]", n_steps as f64 * dt)));
    }
    Ok(k as usize)
}

/// Grid index of a pulse, snapping to the nearest grid point.
pub fn pulse_index(t: f64, dt: f64, n_steps: usize) -> Result<usize> {
    let k = (t / dt).round();
    if !(k >= 0.0) || k as usize > n_steps || (t - k * dt).abs() > 0.5 * dt * (1.0 + 1e-9) {
        return Err(Error::Schedule(format!("pulse at {t} lies outside the grid [0, {}]", n_steps as f64 * dt)));
    }
    Ok(k as usize)
}

pub(crate) struct CompiledObservable {
    op: Vec<C64>,
    readout: Vec<(CompiledPulse, f64)>,
}

pub(crate) struct CompiledCircuit {
    pub n_steps: usize,
    pulses: BTreeMap<usize, Vec<(CompiledPulse, f64)>>,
    /// grid index of each sample
    pub sample_grid: Vec<usize>,
    samples_at: BTreeMap<usize, usize>,
}

pub(crate) struct CompiledModel<'a> {
    pub model: &'a ModelSpec,
    pub n: usize,
    pub dt: f64,
    kernel: LindbladKernel,
    n_driven: usize,
    rates: Vec<f64>,
    observables: Vec<CompiledObservable>,
    initial: Vec<C64>,
    pub circuits: Vec<CompiledCircuit>,
    pub n_steps_max: usize,
}

fn pulse_p(model: &ModelSpec, ev: &PulseEvent) -> Result<f64> {
    let p = ev.error.map(|id| model.params.value(id)).unwrap_or(0.0);
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("pulse error probability {p} outside [0, 1)")));
    }
    Ok(p)
}

impl<'a> CompiledModel<'a> {
    pub fn new(model: &'a ModelSpec, circuits: &[Circuit], dt: f64) -> Result<Self> {
        model.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
        }
        let n = model.space.dim();
        let mut terms: Vec<CMatrix> = model.driven.iter().map(|t| t.operator.matrix().clone()).collect();
        if let Some(c) = &model.coupling {
            terms.push(c.operator.matrix().clone());
        }
        let jumps: Vec<CMatrix> = model.jumps.iter().map(|j| j.operator.matrix().clone()).collect();
        let kernel = LindbladKernel::new(model.h0.matrix(), &terms, &jumps);
        let rates = model
            .jumps
            .iter()
            .map(|j| {
                let g = j.rate_scale * model.params.value(j.rate);
                if g >= 0.0 && g.is_finite() {
                    Ok(g)
                } else {
                    Err(Error::InvalidArgument(format!("jump rate {g} must be non-negative")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut observables = Vec::new();
        for o in &model.observables {
            let mut op = vec![ZERO; n * n];
            flat::from_matrix(o.operator.matrix(), &mut op);
            let readout = o
                .readout
                .iter()
                .map(|ev| Ok((CompiledPulse::from_event(&model.space, ev)?, pulse_p(model, ev)?)))
                .collect::<Result<Vec<_>>>()?;
            observables.push(CompiledObservable { op, readout });
        }
        let mut compiled = Vec::new();
        for c in circuits {
            if !(c.duration >= 0.0 && c.duration.is_finite()) {
                return Err(Error::Schedule(format!("circuit `{}` has invalid duration {}", c.name, c.duration)));
            }
            let n_steps = (c.duration / dt).round() as usize;
            if (n_steps as f64 * dt - c.duration).abs() > GRID_TOL * dt.max(c.duration) {
                return Err(Error::Schedule(format!("duration {} of `{}` is not a multiple of δt = {dt}", c.duration, c.name)));
            }
            let mut pulses: BTreeMap<usize, Vec<(CompiledPulse, f64)>> = BTreeMap::new();
            let mut last = f64::NEG_INFINITY;
            for ev in &c.schedule {
                if ev.time < last {
                    return Err(Error::Schedule(format!("pulses of `{}` are not sorted by time", c.name)));
                }
                last = ev.time;
                let k = pulse_index(ev.time, dt, n_steps)?;
                pulses.entry(k).or_default().push((CompiledPulse::from_event(&model.space, ev)?, pulse_p(model, ev)?));
            }
            let mut sample_grid = Vec::with_capacity(c.sample_times.len());
            let mut samples_at = BTreeMap::new();
            for (s, &t) in c.sample_times.iter().enumerate() {
                let k = grid_index(t, dt, n_steps)?;
                if sample_grid.last().is_some_and(|&prev| prev >= k) {
                    return Err(Error::Schedule(format!("sample times of `{}` must be strictly increasing", c.name)));
                }
                sample_grid.push(k);
                samples_at.insert(k, s);
            }
            compiled.push(CompiledCircuit { n_steps, pulses, sample_grid, samples_at });
        }
        let n_steps_max = compiled.iter().map(|c| c.n_steps).max().unwrap_or(0);
        let mut initial = vec![ZERO; n * n];
        flat::from_matrix(&model.initial, &mut initial);
        Ok(CompiledModel {
            model,
            n,
            dt,
            kernel,
            n_driven: model.driven.len(),
            rates,
            observables,
            initial,
            circuits: compiled,
            n_steps_max,
        })
    }

    /// Draws the member's noise tapes and realizes its classical inputs.
    pub fn prepare_member(&self, member: usize, seed: u64) -> Result<MemberInputs> {
        let ns = self.n_steps_max;
        let mut tapes = Vec::with_capacity(self.model.processes.len());
        let mut values = Vec::with_capacity(self.model.processes.len());
        for (p, spec) in self.model.processes.iter().enumerate() {
            let mut rng = member_rng(seed, member as u64, p as u64);
            let tape = draw_tape(&spec.kind, ns, &mut rng);
            values.push(realize(&spec.kind, &tape, &self.model.params, self.dt, ns)?);
            tapes.push(tape);
        }
        let (coupling, lost_at) = match &self.model.coupling {
            None => (None, None),
            Some(c) => {
                let centers = [c.trap.centers[c.initial_traps[0]], c.trap.centers[c.initial_traps[1]]];
                match &c.motion {
                    Motion::Pinned => {
                        let j = dipolar_scalar(centers[0], centers[1], c.j0, c.quantization_axis)?;
                        (Some(vec![j; ns]), None)
                    }
                    Motion::Langevin(cfg) => {
                        let mut rng = member_rng(seed, member as u64, MD_STREAM);
                        let mut md = MdState::thermal(&c.trap, cfg, &c.initial_traps, &mut rng);
                        let half = ((self.dt / (2.0 * cfg.substep)).ceil() as usize).max(1);
                        let h = self.dt / (2 * half) as f64;
                        let lost_now = |md: &MdState| {
                            md.positions.iter().zip(c.initial_traps).any(|(x, t)| nearest_trap(&c.trap, *x) != t)
                        };
                        let mut lost_at = lost_now(&md).then_some(0);
                        let mut js = vec![0.0; ns];
                        let mut failed = false;
                        for (k, jk) in js.iter_mut().enumerate() {
                            for _ in 0..half {
                                if step_langevin_md(&mut md, &c.trap, cfg, h, &mut rng).is_err() {
                                    failed = true;
                                    break;
                                }
                            }
                            if failed {
                                lost_at.get_or_insert(k + 1);
                                break;
                            }
                            *jk = dipolar_scalar(md.positions[0], md.positions[1], c.j0, c.quantization_axis).unwrap_or(0.0);
                            for _ in 0..half {
                                if step_langevin_md(&mut md, &c.trap, cfg, h, &mut rng).is_err() {
                                    failed = true;
                                    break;
                                }
                            }
                            if failed || lost_now(&md) {
                                lost_at.get_or_insert(k + 1);
                            }
                            if failed {
                                break;
                            }
                        }
                        (Some(js), lost_at)
                    }
                }
            }
        };
        Ok(MemberInputs { tapes, values, coupling, lost_at })
    }

    fn coefficients(&self, inp: &MemberInputs, k: usize, vals: &mut Vec<f64>, coeffs: &mut Vec<f64>) {
        vals.clear();
        vals.extend(inp.values.iter().map(|v| v[k]));
        coeffs.clear();
        coeffs.extend(self.model.driven.iter().map(|t| t.coefficient.eval(vals)));
        if let Some(j) = &inp.coupling {
            coeffs.push(j[k]);
        }
    }

    fn apply_pulses(&self, cc: &CompiledCircuit, k: usize, rho: &mut Vec<C64>, keep: Option<&mut Vec<Vec<C64>>>) {
        if let Some(list) = cc.pulses.get(&k) {
            let mut keep = keep;
            let mut out = vec![ZERO; rho.len()];
            for (pulse, p) in list {
                if let Some(k) = keep.as_deref_mut() {
                    k.push(rho.clone());
                }
                pulse.apply(rho, *p, &mut out);
                std::mem::swap(rho, &mut out);
            }
        }
    }

    fn measure(&self, obs: &CompiledObservable, rho: &[C64]) -> f64 {
        if obs.readout.is_empty() {
            return flat::re_inner(&obs.op, rho);
        }
        let mut cur = rho.to_vec();
        let mut out = vec![ZERO; rho.len()];
        for (pulse, p) in &obs.readout {
            pulse.apply(&cur, *p, &mut out);
            std::mem::swap(&mut cur, &mut out);
        }
        flat::re_inner(&obs.op, &cur)
    }

    /// Forward sweep of circuit `ci`; returns the record laid out as
    /// `o * n_samples + s`.
    pub fn forward(&self, ci: usize, inp: &MemberInputs) -> Result<Vec<f64>> {
        let cc = &self.circuits[ci];
        let ns = cc.sample_grid.len();
        let no = self.observables.len();
        let mut record = vec![0.0; no * ns];
        let mut rho = self.initial.clone();
        let mut ws = Workspace::new(self.n);
        let (mut vals, mut coeffs) = (Vec::new(), Vec::new());
        for k in 0..=cc.n_steps {
            self.apply_pulses(cc, k, &mut rho, None);
            if let Some(&s) = cc.samples_at.get(&k) {
                for (o, obs) in self.observables.iter().enumerate() {
                    record[o * ns + s] = self.measure(obs, &rho);
                }
            }
            if k < cc.n_steps {
                self.coefficients(inp, k, &mut vals, &mut coeffs);
                self.kernel
                    .step(&mut rho, &coeffs, &self.rates, self.dt, &mut ws)
                    .map_err(|_| Error::NonFinite(format!("Lindblad step {k} produced an invalid state")))?;
            }
        }
        Ok(record)
    }

    /// Reverse sweep of circuit `ci` for record adjoints `xbar` (same layout
    /// as [`Self::forward`]). States are recomputed from checkpoints placed
    /// every `every` grid points. Gradients with respect to external
    /// parameter values are accumulated into `grads`.
    pub fn backward(&self, ci: usize, inp: &MemberInputs, xbar: &[f64], every: usize, grads: &mut [f64]) -> Result<()> {
        let cc = &self.circuits[ci];
        let every = every.max(1);
        let n_steps = cc.n_steps;
        let ns = cc.sample_grid.len();
        let nn = self.n * self.n;
        let mut ws = Workspace::new(self.n);
        let (mut vals, mut coeffs) = (Vec::new(), Vec::new());

        // Checkpoints of the pre-pulse state at k = 0, every, 2·every, ...
        let mut checkpoints: Vec<Vec<C64>> = Vec::new();
        let mut rho = self.initial.clone();
        for k in 0..=n_steps {
            if k % every == 0 {
                checkpoints.push(rho.clone());
            }
            if k == n_steps {
                break;
            }
            self.apply_pulses(cc, k, &mut rho, None);
            self.coefficients(inp, k, &mut vals, &mut coeffs);
            self.kernel
                .step(&mut rho, &coeffs, &self.rates, self.dt, &mut ws)
                .map_err(|_| Error::NonFinite(format!("Lindblad step {k} produced an invalid state")))?;
        }

        let n_proc = self.model.processes.len();
        let mut vbar = vec![vec![0.0; n_steps]; n_proc];
        let mut cbar = vec![0.0; coeffs.len().max(self.n_driven + usize::from(inp.coupling.is_some()))];
        let mut rate_bar = vec![0.0; self.rates.len()];
        let mut adj = vec![ZERO; nn];
        let mut vb_step = vec![0.0; n_proc];

        for seg in (0..checkpoints.len()).rev() {
            let start = seg * every;
            let end = ((seg + 1) * every - 1).min(n_steps);
            // Recompute pre-pulse states of the segment.
            let mut pre: Vec<Vec<C64>> = Vec::with_capacity(end - start + 1);
            let mut rho = checkpoints[seg].clone();
            for k in start..=end {
                pre.push(rho.clone());
                if k == end {
                    break;
                }
                self.apply_pulses(cc, k, &mut rho, None);
                self.coefficients(inp, k, &mut vals, &mut coeffs);
                self.kernel
                    .step(&mut rho, &coeffs, &self.rates, self.dt, &mut ws)
                    .map_err(|_| Error::NonFinite(format!("Lindblad step {k} produced an invalid state")))?;
            }
            for k in (start..=end).rev() {
                let mut post = pre[k - start].clone();
                let mut chain = Vec::new();
                self.apply_pulses(cc, k, &mut post, Some(&mut chain));
                if k < n_steps {
                    self.coefficients(inp, k, &mut vals, &mut coeffs);
                    cbar.iter_mut().for_each(|c| *c = 0.0);
                    self.kernel
                        .step_backward(&post, &mut adj, &coeffs, &self.rates, self.dt, &mut cbar, &mut rate_bar, &mut ws)
                        .map_err(|_| Error::NonFiniteAdjoint { step: k, what: "Lindblad step".into() })?;
                    vb_step.iter_mut().for_each(|v| *v = 0.0);
                    for (t, &cb) in self.model.driven.iter().zip(&cbar) {
                        t.coefficient.backprop(&vals, cb, &mut vb_step);
                    }
                    for (p, v) in vb_step.iter().enumerate() {
                        vbar[p][k] += v;
                    }
                }
                if let Some(&s) = cc.samples_at.get(&k) {
                    for (o, obs) in self.observables.iter().enumerate() {
                        let xb = xbar[o * ns + s];
                        if xb == 0.0 {
                            continue;
                        }
                        self.measure_backward(obs, &post, xb, &mut adj, grads);
                    }
                }
                if let Some(list) = cc.pulses.get(&k) {
                    for ((pulse, p), state) in list.iter().zip(&chain).rev() {
                        let pb = pulse.backward(state, *p, &mut adj);
                        if let Some(id) = pulse.error {
                            grads[id.0] += pb;
                        }
                    }
                }
                if !flat::is_finite(&adj) {
                    return Err(Error::NonFiniteAdjoint { step: k, what: "pulse or readout".into() });
                }
            }
        }

        for (p, spec) in self.model.processes.iter().enumerate() {
            realize_vjp(&spec.kind, &inp.tapes[p], &self.model.params, self.dt, &vbar[p], grads)?;
        }
        for (j, rb) in self.model.jumps.iter().zip(&rate_bar) {
            grads[j.rate.0] += j.rate_scale * rb;
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteAdjoint { step: 0, what: "parameter gradient".into() });
        }
        Ok(())
    }

    fn measure_backward(&self, obs: &CompiledObservable, rho: &[C64], xb: f64, adj: &mut [C64], grads: &mut [f64]) {
        let mut g: Vec<C64> = obs.op.iter().map(|v| v * xb).collect();
        if !obs.readout.is_empty() {
            let mut states = Vec::with_capacity(obs.readout.len());
            let mut cur = rho.to_vec();
            let mut out = vec![ZERO; rho.len()];
            for (pulse, p) in &obs.readout {
                states.push(cur.clone());
                pulse.apply(&cur, *p, &mut out);
                std::mem::swap(&mut cur, &mut out);
            }
            for ((pulse, p), st) in obs.readout.iter().zip(&states).rev() {
                let pb = pulse.backward(st, *p, &mut g);
                if let Some(id) = pulse.error {
                    grads[id.0] += pb;
                }
            }
        }
        for (a, v) in adj.iter_mut().zip(&g) {
            *a += v;
        }
    }

    /// retained[s] for each sample of circuit `ci`.
    pub fn retained(&self, ci: usize, inp: &MemberInputs) -> Vec<bool> {
        self.circuits[ci].sample_grid.iter().map(|&k| inp.lost_at.is_none_or(|l| k < l)).collect()
    }
}

/// Classical inputs of one ensemble member.
#[derive(Debug, Clone)]
pub struct MemberInputs {
    pub tapes: Vec<NoiseTape>,
    /// values[p][k]: process p at the midpoint of step k.
    pub values: Vec<Vec<f64>>,
    /// Position-coupling scalar per step.
    pub coupling: Option<Vec<f64>>,
    /// First grid index at which the member counts as lost.
    pub lost_at: Option<usize>,
}

/// Whether the model moves particles and therefore reports loss.
pub(crate) fn tracks_loss(model: &ModelSpec) -> bool {
    matches!(model.coupling.as_ref().map(|c| &c.motion), Some(Motion::Langevin(_)))
}

/// Per-member output of an ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberRecord {
    /// values[c]: record of circuit c, laid out as `o * n_samples + s`.
    pub values: Vec<Vec<f64>>,
    /// retained[c][s]: whether the member still counts at sample s.
    pub retained: Vec<Vec<bool>>,
}

/// Runs every member through every circuit; circuits share each member's
/// noise realization.
pub fn simulate_members(model: &ModelSpec, circuits: &[Circuit], cfg: &EnsembleConfig) -> Result<Vec<MemberRecord>> {
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let cm = CompiledModel::new(model, circuits, cfg.dt)?;
    (0..cfg.batch)
        .into_par_iter()
        .map(|b| {
            let inp = cm.prepare_member(b, cfg.seed)?;
            let mut values = Vec::with_capacity(circuits.len());
            let mut retained = Vec::with_capacity(circuits.len());
            for ci in 0..circuits.len() {
                values.push(cm.forward(ci, &inp)?);
                retained.push(cm.retained(ci, &inp));
            }
            Ok(MemberRecord { values, retained })
        })
        .collect()
}

pub(crate) fn stats_from_records(
    model: &ModelSpec,
    circuits: &[Circuit],
    records: &[MemberRecord],
    track_loss: bool,
) -> Result<Vec<TrajectoryStats>> {
    let names: Vec<String> = model.observables.iter().map(|o| o.name.clone()).collect();
    circuits
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let values: Vec<&[f64]> = records.iter().map(|r| r.values[ci].as_slice()).collect();
            let retained: Vec<Vec<bool>> = records.iter().map(|r| r.retained[ci].clone()).collect();
            TrajectoryStats::from_members(names.clone(), c.sample_times.clone(), &values, &retained, track_loss)
        })
        .collect()
}

/// Ensemble statistics for each circuit.
pub fn simulate_circuits(model: &ModelSpec, circuits: &[Circuit], cfg: &EnsembleConfig) -> Result<Vec<TrajectoryStats>> {
    let records = simulate_members(model, circuits, cfg)?;
    stats_from_records(model, circuits, &records, tracks_loss(model))
}

/// Runs the model's own schedule over `[0, duration]`.
pub fn simulate_ensemble(
    model: &ModelSpec,
    batch: usize,
    duration: f64,
    dt: f64,
    sample_times: &[f64],
    seed: u64,
) -> Result<TrajectoryStats> {
    let circuit = Circuit::new("default", model.schedule.clone(), duration, sample_times.to_vec());
    let cfg = EnsembleConfig { batch, dt, seed };
    Ok(simulate_circuits(model, &[circuit], &cfg)?.remove(0))
}
