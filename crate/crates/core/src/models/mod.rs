//! Assembly of a driven open quantum system and ensemble simulation.
//!
//! The Hamiltonian of member b at time t is
//!
//! ```text
//! H_b(t) = H0 + Σ_j f_j(ε_b(t)) S_j + J_b(t) C
//! ```
//!
//! where ε_b are the member's process values, f_j are [`Coefficient`] maps
//! and the optional [`PositionCoupling`] contributes a scalar J computed
//! from molecular-dynamics positions.

pub mod engine;
mod stats;

pub use engine::{simulate_circuits, simulate_ensemble, simulate_members, Circuit, EnsembleConfig, MemberRecord};
pub use stats::{mean_std, TrajectoryStats};

use std::collections::BTreeSet;

use crate::dynamics::{JumpSpec, PulseEvent};
use crate::error::{Error, Result};
use crate::hilbert::{HilbertSpace, Operator};
use crate::linalg::{c64, CMatrix};
use crate::processes::trap::{LangevinConfig, TrapField, Vec3};
use crate::processes::{ParamId, ParamStore, ProcessSpec};

/// Scalar map f_j from process values to a Hamiltonian coefficient.
/// Process references are indices into [`ModelSpec::processes`].
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Process(usize),
    Affine { process: usize, scale: f64, offset: f64 },
    Product(usize, usize),
    Linear(Vec<(usize, f64)>),
}

impl Coefficient {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            Coefficient::Process(p) => v[*p],
            Coefficient::Affine { process, scale, offset } => scale * v[*process] + offset,
            Coefficient::Product(a, b) => v[*a] * v[*b],
            Coefficient::Linear(terms) => terms.iter().map(|(p, w)| w * v[*p]).sum(),
        }
    }

    /// Accumulates ∂L/∂v given ∂L/∂f.
    pub fn backprop(&self, v: &[f64], fbar: f64, vbar: &mut [f64]) {
        match self {
            Coefficient::Process(p) => vbar[*p] += fbar,
            Coefficient::Affine { process, scale, .. } => vbar[*process] += scale * fbar,
            Coefficient::Product(a, b) => {
                vbar[*a] += fbar * v[*b];
                vbar[*b] += fbar * v[*a];
            }
            Coefficient::Linear(terms) => {
                for (p, w) in terms {
                    vbar[*p] += w * fbar;
                }
            }
        }
    }

    pub fn processes(&self) -> Vec<usize> {
        match self {
            Coefficient::Process(p) | Coefficient::Affine { process: p, .. } => vec![*p],
            Coefficient::Product(a, b) => vec![*a, *b],
            Coefficient::Linear(terms) => terms.iter().map(|(p, _)| *p).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrivenTerm {
    pub coefficient: Coefficient,
    pub operator: Operator,
}

/// Dipolar law J = (J0/r³)(1 − 3cos²θ′), θ′ the angle between r1 − r2 and
/// the quantization axis.
pub fn dipolar_scalar(r1: Vec3, r2: Vec3, j0: f64, axis: Vec3) -> Result<f64> {
    let d = [r1[0] - r2[0], r1[1] - r2[1], r1[2] - r2[2]];
    let r2n = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if !(r2n > 0.0) {
        return Err(Error::InvalidArgument("dipolar coupling of coincident positions".into()));
    }
    let an = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let cos = (d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2]) / (r2n.sqrt() * an);
    Ok(j0 / (r2n * r2n.sqrt()) * (1.0 - 3.0 * cos * cos))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    /// Particles held at their tweezer centers.
    Pinned,
    /// Thermal Langevin dynamics in the trap field.
    Langevin(LangevinConfig),
}

/// Two-body term J(r1(t), r2(t))·C whose scalar follows particle positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionCoupling {
    pub operator: Operator,
    pub j0: f64,
    pub quantization_axis: Vec3,
    pub trap: TrapField,
    pub motion: Motion,
    /// Starting tweezer of each particle.
    pub initial_traps: [usize; 2],
}

/// A measured quantity: optional readout rotations applied to a copy of
/// the state, followed by Tr(Oρ). Readout pulse times are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub name: String,
    pub operator: Operator,
    pub readout: Vec<PulseEvent>,
}

impl Observable {
    pub fn new(name: impl Into<String>, operator: Operator) -> Self {
        Observable { name: name.into(), operator, readout: Vec::new() }
    }

    pub fn with_readout(name: impl Into<String>, operator: Operator, readout: Vec<PulseEvent>) -> Self {
        Observable { name: name.into(), operator, readout }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub space: HilbertSpace,
    pub h0: Operator,
    pub driven: Vec<DrivenTerm>,
    pub coupling: Option<PositionCoupling>,
    pub jumps: Vec<JumpSpec>,
    pub processes: Vec<ProcessSpec>,
    pub params: ParamStore,
    /// Default pulse schedule used by [`simulate_ensemble`].
    pub schedule: Vec<PulseEvent>,
    pub observables: Vec<Observable>,
    pub initial: CMatrix,
}

impl ModelSpec {
    /// Model with only a static Hamiltonian, starting from `initial`.
    pub fn new(h0: Operator, initial: CMatrix) -> Self {
        ModelSpec {
            space: h0.space().clone(),
            h0,
            driven: Vec::new(),
            coupling: None,
            jumps: Vec::new(),
            processes: Vec::new(),
            params: ParamStore::new(),
            schedule: Vec::new(),
            observables: Vec::new(),
            initial,
        }
    }

    pub fn add_process(&mut self, spec: ProcessSpec) -> usize {
        self.processes.push(spec);
        self.processes.len() - 1
    }

    pub fn observable_index(&self, name: &str) -> Option<usize> {
        self.observables.iter().position(|o| o.name == name)
    }

    /// Parameters referenced by processes, jumps and pulses.
    pub fn reachable_params(&self) -> BTreeSet<ParamId> {
        let mut out = BTreeSet::new();
        for p in &self.processes {
            out.extend(p.kind.params());
        }
        for j in &self.jumps {
            out.insert(j.rate);
        }
        for ev in self.schedule.iter().chain(self.observables.iter().flat_map(|o| o.readout.iter())) {
            if let Some(e) = ev.error {
                out.insert(e);
            }
        }
        out
    }

    /// Checks that every operator acts on the model space, Hamiltonian
    /// pieces are hermitian, indices resolve and no flexible parameter is
    /// orphaned.
    pub fn validate(&self) -> Result<()> {
        let check = |op: &Operator, what: &str, herm: bool| -> Result<()> {
            if op.space() != &self.space {
                return Err(Error::Dimension(format!("{what} acts on {}, model on {}", op.space(), self.space)));
            }
            if herm && !op.is_hermitian() {
                return Err(Error::InvalidArgument(format!("{what} must be hermitian")));
            }
            Ok(())
        };
        check(&self.h0, "H0", true)?;
        for (j, t) in self.driven.iter().enumerate() {
            check(&t.operator, &format!("driven term {j}"), true)?;
            if let Some(p) = t.coefficient.processes().into_iter().find(|p| *p >= self.processes.len()) {
                return Err(Error::InvalidArgument(format!("driven term {j} references missing process {p}")));
            }
        }
        if let Some(c) = &self.coupling {
            check(&c.operator, "position coupling", true)?;
            if c.initial_traps.iter().any(|&t| t >= c.trap.centers.len()) {
                return Err(Error::InvalidArgument("position coupling references a missing tweezer".into()));
            }
        }
        for (k, j) in self.jumps.iter().enumerate() {
            check(&j.operator, &format!("jump {k}"), false)?;
        }
        for o in &self.observables {
            check(&o.operator, &format!("observable `{}`", o.name), true)?;
        }
        let d = self.space.dim();
        if self.initial.nrows() != d || self.initial.ncols() != d {
            return Err(Error::Dimension("initial state does not match the model space".into()));
        }
        let reach = self.reachable_params();
        if let Some(id) = reach.iter().find(|id| id.0 >= self.params.len()) {
            return Err(Error::InvalidArgument(format!("reference to unregistered parameter {}", id.0)));
        }
        for id in self.params.flexible_ids() {
            if !reach.contains(&id) {
                return Err(Error::InvalidArgument(format!(
                    "flexible parameter `{}` is not used by the model",
                    self.params.get(id).name
                )));
            }
        }
        Ok(())
    }
}

/// H = H0 + Σ_j f_j(ε) S_j (+ J·C) for process values `values` and an
/// optional coupling scalar.
pub fn assemble_hamiltonian(model: &ModelSpec, values: &[f64], coupling: Option<f64>) -> Result<Operator> {
    if values.len() != model.processes.len() {
        return Err(Error::Dimension(format!("{} process values for {} processes", values.len(), model.processes.len())));
    }
    let mut m = model.h0.matrix().clone();
    for t in &model.driven {
        let f = t.coefficient.eval(values);
        if !f.is_finite() {
            return Err(Error::NonFinite("driven-term coefficient".into()));
        }
        m += t.operator.matrix() * c64(f, 0.0);
    }
    if let (Some(c), Some(j)) = (&model.coupling, coupling) {
        if !j.is_finite() {
            return Err(Error::NonFinite("position coupling".into()));
        }
        m += c.operator.matrix() * c64(j, 0.0);
    }
    Operator::hermitian(model.space.clone(), m)
}
