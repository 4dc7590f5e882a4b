//! Gaussian optical tweezers and Langevin molecular dynamics inside them.
//!
//! Units: positions in µm, time in ms, mass in amu, energy in
//! amu·µm²/ms² (see [`crate::units::KB_MD_UNITS`]). Each tweezer beam
//! propagates along z.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm2(a: Vec3) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

/// Sum of single-tweezer potentials U(r, z) = −V (w0/w(z))² exp(−2r²/w(z)²)
/// with w(z) = w0 √(1 + (z/z_R)²).
#[derive(Debug, Clone, PartialEq)]
pub struct TrapField {
    pub depth: f64,
    pub waist: f64,
    pub wavelength: f64,
    pub centers: Vec<Vec3>,
}

impl TrapField {
    pub fn new(depth: f64, waist: f64, wavelength: f64, centers: Vec<Vec3>) -> Result<Self> {
        if !(depth >= 0.0 && waist > 0.0 && wavelength > 0.0) {
            return Err(Error::InvalidArgument("trap depth, waist and wavelength must be positive".into()));
        }
        if centers.is_empty() {
            return Err(Error::InvalidArgument("a trap field needs at least one tweezer".into()));
        }
        Ok(TrapField { depth, waist, wavelength, centers })
    }

    /// z_R = π w0² / λ.
    pub fn rayleigh_range(&self) -> f64 {
        std::f64::consts::PI * self.waist * self.waist / self.wavelength
    }

    /// Curvatures (k_r, k_z) of one tweezer at its center.
    pub fn harmonic_stiffness(&self) -> (f64, f64) {
        let zr = self.rayleigh_range();
        (4.0 * self.depth / (self.waist * self.waist), 2.0 * self.depth / (zr * zr))
    }

    fn single(&self, d: Vec3) -> (f64, Vec3) {
        let w0sq = self.waist * self.waist;
        let zr = self.rayleigh_range();
        let q = 1.0 / (1.0 + (d[2] / zr).powi(2));
        let r2 = d[0] * d[0] + d[1] * d[1];
        let e = (-2.0 * r2 * q / w0sq).exp();
        let u = -self.depth * q * e;
        let dudx = u * (-4.0 * q / w0sq);
        let dq = -2.0 * d[2] / (zr * zr) * q * q;
        let dudz = -self.depth * e * dq * (1.0 - 2.0 * r2 * q / w0sq);
        (u, [-dudx * d[0], -dudx * d[1], -dudz])
    }
}

pub fn trap_potential(field: &TrapField, position: Vec3) -> f64 {
    field.centers.iter().map(|c| field.single(sub(position, *c)).0).sum()
}

/// −∇U, evaluated analytically.
pub fn trap_force(field: &TrapField, position: Vec3) -> Vec3 {
    let mut f = [0.0; 3];
    for c in &field.centers {
        let (_, fc) = field.single(sub(position, *c));
        for k in 0..3 {
            f[k] += fc[k];
        }
    }
    f
}

/// Index of the Euclidean-nearest tweezer center; ties go to the lowest index.
pub fn nearest_trap(field: &TrapField, position: Vec3) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in field.centers.iter().enumerate() {
        let d = norm2(sub(position, *c));
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinConfig {
    pub mass: f64,
    /// k_B T per axis (x, y, z) in MD energy units.
    pub kt: Vec3,
    /// Friction coefficient 1/τ_damp.
    pub friction: f64,
    /// Integrator substep.
    pub substep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub time: f64,
}

impl MdState {
    pub fn at_rest(positions: Vec<Vec3>) -> Self {
        let velocities = vec![[0.0; 3]; positions.len()];
        MdState { positions, velocities, time: 0.0 }
    }

    /// Thermal sample of the locally harmonic approximation around each
    /// particle's starting tweezer.
    pub fn thermal(field: &TrapField, cfg: &LangevinConfig, centers: &[usize], rng: &mut impl Rng) -> Self {
        let (kr, kz) = field.harmonic_stiffness();
        let stiff = [kr, kr, kz];
        let mut positions = Vec::with_capacity(centers.len());
        let mut velocities = Vec::with_capacity(centers.len());
        for &c in centers {
            let mut x = field.centers[c];
            let mut v = [0.0; 3];
            for k in 0..3 {
                let sx = if stiff[k] > 0.0 { (cfg.kt[k] / stiff[k]).sqrt() } else { 0.0 };
                let sv = (cfg.kt[k] / cfg.mass).sqrt();
                x[k] += sx * rng.sample::<f64, _>(StandardNormal);
                v[k] = sv * rng.sample::<f64, _>(StandardNormal);
            }
            positions.push(x);
            velocities.push(v);
        }
        MdState { positions, velocities, time: 0.0 }
    }
}

/// One BAOAB Langevin step of length `dt` for every particle. Returns an
/// error if a force or coordinate becomes non-finite.
pub fn step_langevin_md(
    state: &mut MdState,
    field: &TrapField,
    cfg: &LangevinConfig,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    let c1 = (-cfg.friction * dt).exp();
    let c2 = (1.0 - c1 * c1).max(0.0).sqrt();
    let inv_m = 1.0 / cfg.mass;
    for (x, v) in state.positions.iter_mut().zip(state.velocities.iter_mut()) {
        let f = trap_force(field, *x);
        for k in 0..3 {
            v[k] += 0.5 * dt * f[k] * inv_m;
            x[k] += 0.5 * dt * v[k];
        }
        for k in 0..3 {
            let xi: f64 = rng.sample(StandardNormal);
            v[k] = c1 * v[k] + c2 * (cfg.kt[k] * inv_m).sqrt() * xi;
            x[k] += 0.5 * dt * v[k];
        }
        let f = trap_force(field, *x);
        for k in 0..3 {
            v[k] += 0.5 * dt * f[k] * inv_m;
        }
        if !(x.iter().chain(v.iter()).all(|a| a.is_finite())) {
            return Err(Error::NonFinite("molecular dynamics left the numeric range".into()));
        }
    }
    state.time += dt;
    Ok(())
}
