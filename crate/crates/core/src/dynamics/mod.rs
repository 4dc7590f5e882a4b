//! Time propagation: trace-preserving Lindblad steps, unitary steps and
//! pulse sequences.

pub mod kernel;
pub mod pulse;

pub use kernel::{LindbladKernel, StepFailure, Workspace};
pub use pulse::{apply_pulse, equatorial_axis, rotation, CompiledPulse, PulseEvent};

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrixBatch, Operator};
use crate::linalg::{flat, hermitian_propagator, CMatrix, C64, ZERO};
use crate::processes::ParamId;

/// Jump operator L_k with rate γ_k = `rate_scale` × value of `rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpec {
    pub operator: Operator,
    pub rate: ParamId,
    pub rate_scale: f64,
}

impl JumpSpec {
    pub fn new(operator: Operator, rate: ParamId) -> Self {
        JumpSpec { operator, rate, rate_scale: 1.0 }
    }

    pub fn scaled(operator: Operator, rate: ParamId, rate_scale: f64) -> Self {
        JumpSpec { operator, rate, rate_scale }
    }
}

/// One Lindblad step for every member. `hamiltonians` holds either one
/// operator shared by all members or one per member, evaluated at the step
/// midpoint; `jumps` pairs each jump operator with its rate.
pub fn lindblad_step(
    rho: &mut DensityMatrixBatch,
    hamiltonians: &[Operator],
    jumps: &[(Operator, f64)],
    dt: f64,
) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    let b = rho.len();
    if hamiltonians.len() != 1 && hamiltonians.len() != b {
        return Err(Error::Dimension(format!("{} Hamiltonians for {b} members", hamiltonians.len())));
    }
    for h in hamiltonians {
        if h.space() != rho.space() {
            return Err(Error::Dimension(format!("Hamiltonian on {}, state on {}", h.space(), rho.space())));
        }
        if !h.is_hermitian() {
            return Err(Error::InvalidArgument("Hamiltonian must be hermitian".into()));
        }
    }
    for (l, g) in jumps {
        if l.space() != rho.space() {
            return Err(Error::Dimension(format!("jump on {}, state on {}", l.space(), rho.space())));
        }
        if !(*g >= 0.0) {
            return Err(Error::InvalidArgument(format!("jump rate {g} must be non-negative")));
        }
    }
    let n = rho.space().dim();
    let ls: Vec<CMatrix> = jumps.iter().map(|(l, _)| l.matrix().clone()).collect();
    let rates: Vec<f64> = jumps.iter().map(|(_, g)| *g).collect();
    let mut kernels: Vec<LindbladKernel> = Vec::with_capacity(hamiltonians.len());
    for h in hamiltonians {
        kernels.push(LindbladKernel::new(h.matrix(), &[], &ls));
    }
    let mut ws = Workspace::new(n);
    let mut buf = vec![ZERO; n * n];
    for (idx, m) in rho.members_mut().iter_mut().enumerate() {
        let k = if kernels.len() == 1 { &kernels[0] } else { &kernels[idx] };
        flat::from_matrix(m, &mut buf);
        k.step(&mut buf, &[], &rates, dt, &mut ws)
            .map_err(|_| Error::NonFinite(format!("Lindblad step failed for member {idx}")))?;
        *m = flat::to_matrix(&buf, n);
    }
    rho.time += dt;
    Ok(())
}

/// ψ ← exp(−iHδt)ψ.
pub fn unitary_step_state(psi: &[C64], h: &Operator, dt: f64) -> Result<Vec<C64>> {
    if psi.len() != h.dim() {
        return Err(Error::Dimension(format!("state of length {} for dimension {}", psi.len(), h.dim())));
    }
    let u = hermitian_propagator(h.matrix(), dt);
    let v = nalgebra::DVector::from_column_slice(psi);
    Ok((u * v).iter().copied().collect())
}

/// ρ ← exp(−iHδt) ρ exp(iHδt).
pub fn unitary_step_density(rho: &CMatrix, h: &Operator, dt: f64) -> Result<CMatrix> {
    if rho.nrows() != h.dim() {
        return Err(Error::Dimension(format!("state of dimension {} for dimension {}", rho.nrows(), h.dim())));
    }
    let u = hermitian_propagator(h.matrix(), dt);
    Ok(&u * rho * u.adjoint())
}
