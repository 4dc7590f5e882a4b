//! Instantaneous single-qubit rotations followed by a depolarizing channel.

use crate::error::{Error, Result};
use crate::hilbert::{embed, pauli, Axis, HilbertSpace, Operator, Subsystem};
use crate::linalg::{c64, flat, CMatrix, C64, ZERO};
use crate::processes::ParamId;

/// R_n̂(α) = exp(−iα n̂·σ/2) on one spin-1/2.
pub fn rotation(axis: [f64; 3], angle: f64) -> Result<CMatrix> {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if !(norm > 0.0) || !angle.is_finite() {
        return Err(Error::InvalidArgument("rotation axis must be a nonzero finite vector".into()));
    }
    let (nx, ny, nz) = (axis[0] / norm, axis[1] / norm, axis[2] / norm);
    let (c, s) = ((0.5 * angle).cos(), (0.5 * angle).sin());
    // cos(α/2) I − i sin(α/2) (nx σx + ny σy + nz σz)
    Ok(CMatrix::from_row_slice(
        2,
        2,
        &[c64(c, -s * nz), c64(-s * ny, -s * nx), c64(s * ny, -s * nx), c64(c, s * nz)],
    ))
}

/// Rotation axis in the xy plane at azimuth φ.
pub fn equatorial_axis(phi: f64) -> [f64; 3] {
    [phi.cos(), phi.sin(), 0.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseEvent {
    pub time: f64,
    pub slot: usize,
    pub axis: [f64; 3],
    pub angle: f64,
    /// Depolarizing strength p of the error channel; `None` for an ideal
    /// pulse.
    pub error: Option<ParamId>,
}

impl PulseEvent {
    pub fn new(time: f64, slot: usize, axis: [f64; 3], angle: f64, error: Option<ParamId>) -> Self {
        PulseEvent { time, slot, axis, angle, error }
    }
}

/// A pulse lowered to dense row-major operators on the full space.
#[derive(Debug, Clone)]
pub struct CompiledPulse {
    n: usize,
    u: Vec<C64>,
    sigmas: [Vec<C64>; 3],
    pub error: Option<ParamId>,
}

fn to_flat(m: &CMatrix) -> Vec<C64> {
    let mut out = vec![ZERO; m.nrows() * m.nrows()];
    flat::from_matrix(m, &mut out);
    out
}

impl CompiledPulse {
    pub fn new(space: &HilbertSpace, slot: usize, axis: [f64; 3], angle: f64, error: Option<ParamId>) -> Result<Self> {
        match space.subsystems().get(slot) {
            Some(Subsystem::SpinHalf) => {}
            _ => return Err(Error::InvalidArgument(format!("pulse slot {slot} of {space} is not a spin-1/2"))),
        }
        let local = Operator::new(HilbertSpace::spin_half(), rotation(axis, angle)?)?;
        let u = embed(&local, space, slot)?;
        let sig = |a| -> Result<Vec<C64>> { Ok(to_flat(embed(&pauli(a), space, slot)?.matrix())) };
        Ok(CompiledPulse {
            n: space.dim(),
            u: to_flat(u.matrix()),
            sigmas: [sig(Axis::X)?, sig(Axis::Y)?, sig(Axis::Z)?],
            error,
        })
    }

    pub fn from_event(space: &HilbertSpace, ev: &PulseEvent) -> Result<Self> {
        Self::new(space, ev.slot, ev.axis, ev.angle, ev.error)
    }

    fn conjugate(&self, a: &[C64], x: &[C64], out: &mut [C64], tmp: &mut [C64]) {
        flat::matmul(a, x, self.n, tmp);
        flat::matmul_adj(tmp, a, self.n, out);
    }

    /// out = (1 − p)·UρU† + (p/3)·Σ_α σ_α UρU† σ_α.
    pub fn apply(&self, rho: &[C64], p: f64, out: &mut [C64]) {
        let nn = self.n * self.n;
        let mut ru = vec![ZERO; nn];
        let mut tmp = vec![ZERO; nn];
        self.conjugate(&self.u, rho, &mut ru, &mut tmp);
        if p == 0.0 {
            out.copy_from_slice(&ru);
            return;
        }
        let mut s = vec![ZERO; nn];
        for (o, r) in out.iter_mut().zip(&ru) {
            *o = r * (1.0 - p);
        }
        for sig in &self.sigmas {
            self.conjugate(sig, &ru, &mut s, &mut tmp);
            for (o, v) in out.iter_mut().zip(&s) {
                *o += v * (p / 3.0);
            }
        }
    }

    /// Reverse pass: `adj` holds ∂L/∂ρ_out on entry and ∂L/∂ρ_in on exit.
    /// Returns ∂L/∂p.
    pub fn backward(&self, rho_in: &[C64], p: f64, adj: &mut [C64]) -> f64 {
        let nn = self.n * self.n;
        let mut ru = vec![ZERO; nn];
        let mut tmp = vec![ZERO; nn];
        let mut s = vec![ZERO; nn];
        self.conjugate(&self.u, rho_in, &mut ru, &mut tmp);
        // d out/dp = −ρ_u + ⅓Σ σρ_uσ
        let mut dp = ru.iter().map(|v| -v).collect::<Vec<_>>();
        let mut gu: Vec<C64> = adj.iter().map(|v| v * (1.0 - p)).collect();
        for sig in &self.sigmas {
            self.conjugate(sig, &ru, &mut s, &mut tmp);
            for (d, v) in dp.iter_mut().zip(&s) {
                *d += v / 3.0;
            }
            self.conjugate(sig, adj, &mut s, &mut tmp);
            for (g, v) in gu.iter_mut().zip(&s) {
                *g += v * (p / 3.0);
            }
        }
        let pbar = flat::re_inner(adj, &dp);
        // ρ̄ = U† G_u U
        flat::adj_matmul(&self.u, &gu, self.n, &mut tmp);
        flat::matmul(&tmp, &self.u, self.n, adj);
        pbar
    }
}

/// Applies one pulse with error probability `p` to every member.
pub fn apply_pulse(rho: &mut crate::hilbert::DensityMatrixBatch, event: &PulseEvent, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("pulse error p = {p} outside [0, 1)")));
    }
    let pulse = CompiledPulse::from_event(rho.space(), event)?;
    let n = rho.space().dim();
    let mut buf = vec![ZERO; n * n];
    let mut out = vec![ZERO; n * n];
    for m in rho.members_mut() {
        flat::from_matrix(m, &mut buf);
        pulse.apply(&buf, p, &mut out);
        *m = flat::to_matrix(&out, n);
    }
    Ok(())
}
