//! Composite Hilbert spaces and the operator algebra every Hamiltonian and
//! jump operator is assembled from.
//!
//! Subsystems are ordered; the basis of the composite space is the
//! Kronecker product with subsystem 0 as the most significant factor. For a
//! spin-1/2 factor, basis index 0 is |↑⟩ (σ_z = +1) and index 1 is |↓⟩.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::linalg::{c64, hermiticity_error, CMatrix, C64, I, ONE, ZERO};

/// Tolerance of the hermiticity check performed by [`Operator::hermitian`].
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    SpinHalf,
    /// Truncated boson mode keeping Fock states 0..=n_max.
    Boson { n_max: usize },
    /// Single-carrier sector of a tight-binding chain.
    Lattice { sites: usize },
}

impl Subsystem {
    pub fn dim(self) -> usize {
        match self {
            Subsystem::SpinHalf => 2,
            Subsystem::Boson { n_max } => n_max + 1,
            Subsystem::Lattice { sites } => sites,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertSpace {
    subsystems: Vec<Subsystem>,
}

impl HilbertSpace {
    pub fn new(subsystems: Vec<Subsystem>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::InvalidArgument("a Hilbert space needs at least one subsystem".into()));
        }
        for s in &subsystems {
            match *s {
                Subsystem::Boson { n_max } if n_max < 1 => {
                    return Err(Error::InvalidArgument("boson n_max must be >= 1".into()))
                }
                Subsystem::Lattice { sites } if sites < 1 => {
                    return Err(Error::InvalidArgument("lattice needs at least one site".into()))
                }
                _ => {}
            }
        }
        Ok(HilbertSpace { subsystems })
    }

    pub fn spin_half() -> Self {
        HilbertSpace { subsystems: vec![Subsystem::SpinHalf] }
    }

    pub fn spins(n: usize) -> Self {
        HilbertSpace { subsystems: vec![Subsystem::SpinHalf; n.max(1)] }
    }

    pub fn boson(n_max: usize) -> Result<Self> {
        Self::new(vec![Subsystem::Boson { n_max }])
    }

    pub fn lattice(sites: usize) -> Result<Self> {
        Self::new(vec![Subsystem::Lattice { sites }])
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.dim()).product()
    }

    pub fn single(&self, slot: usize) -> Result<HilbertSpace> {
        let s = self.subsystems.get(slot).ok_or_else(|| {
            Error::InvalidArgument(format!("slot {slot} out of range for {} subsystems", self.subsystems.len()))
        })?;
        Ok(HilbertSpace { subsystems: vec![*s] })
    }
}

impl fmt::Display for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .subsystems
            .iter()
            .map(|s| match s {
                Subsystem::SpinHalf => "spin1/2".to_string(),
                Subsystem::Boson { n_max } => format!("boson({n_max})"),
                Subsystem::Lattice { sites } => format!("lattice({sites})"),
            })
            .collect();
        write!(f, "{}", parts.join("⊗"))
    }
}

/// A matrix tagged with the space it acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: CMatrix,
    hermitian: bool,
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, space {} has dimension {d}",
                matrix.nrows(),
                matrix.ncols(),
                space
            )));
        }
        Ok(Operator { space, matrix, hermitian: false })
    }

    /// Constructs an operator flagged hermitian, checking ‖M − M†‖_max.
    pub fn hermitian(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        let mut op = Self::new(space, matrix)?;
        let err = hermiticity_error(&op.matrix);
        if err > HERMITIAN_TOL {
            return Err(Error::NotHermitian(err));
        }
        op.hermitian = true;
        Ok(op)
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Operator { space: space.clone(), matrix: CMatrix::identity(d, d), hermitian: true }
    }

    pub fn zeros(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Operator { space: space.clone(), matrix: CMatrix::zeros(d, d), hermitian: true }
    }

    /// Diagonal operator with real entries.
    pub fn diagonal(space: &HilbertSpace, diag: &[f64]) -> Result<Self> {
        let d = space.dim();
        if diag.len() != d {
            return Err(Error::Dimension(format!("{} diagonal entries for dimension {d}", diag.len())));
        }
        let mut m = CMatrix::zeros(d, d);
        for (i, &x) in diag.iter().enumerate() {
            m[(i, i)] = c64(x, 0.0);
        }
        Ok(Operator { space: space.clone(), matrix: m, hermitian: true })
    }

    /// |i⟩⟨j| on the given space.
    pub fn basis_projector(space: &HilbertSpace, i: usize, j: usize) -> Result<Self> {
        let d = space.dim();
        if i >= d || j >= d {
            return Err(Error::InvalidArgument(format!("basis index out of range for dimension {d}")));
        }
        let mut m = CMatrix::zeros(d, d);
        m[(i, j)] = ONE;
        Ok(Operator { space: space.clone(), matrix: m, hermitian: i == j })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn adjoint(&self) -> Operator {
        Operator { space: self.space.clone(), matrix: self.matrix.adjoint(), hermitian: self.hermitian }
    }

    pub fn scale(&self, s: f64) -> Operator {
        Operator { space: self.space.clone(), matrix: &self.matrix * c64(s, 0.0), hermitian: self.hermitian }
    }

    pub fn scale_complex(&self, s: C64) -> Operator {
        Operator { space: self.space.clone(), matrix: &self.matrix * s, hermitian: self.hermitian && s.im == 0.0 }
    }

    /// Re-checks hermiticity and sets the flag if it holds.
    pub fn into_hermitian(self) -> Result<Operator> {
        Operator::hermitian(self.space, self.matrix)
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        &(self * other)? - &(other * self)?
    }

    fn check_space(&self, other: &Operator) -> Result<()> {
        if self.space != other.space {
            return Err(Error::Dimension(format!("operators act on {} and {}", self.space, other.space)));
        }
        Ok(())
    }
}

impl Add for &Operator {
    type Output = Result<Operator>;
    fn add(self, rhs: &Operator) -> Result<Operator> {
        self.check_space(rhs)?;
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix + &rhs.matrix,
            hermitian: self.hermitian && rhs.hermitian,
        })
    }
}

impl Sub for &Operator {
    type Output = Result<Operator>;
    fn sub(self, rhs: &Operator) -> Result<Operator> {
        self.check_space(rhs)?;
        Ok(Operator {
            space: self.space.clone(),
            matrix: &self.matrix - &rhs.matrix,
            hermitian: self.hermitian && rhs.hermitian,
        })
    }
}

impl Mul for &Operator {
    type Output = Result<Operator>;
    fn mul(self, rhs: &Operator) -> Result<Operator> {
        self.check_space(rhs)?;
        Ok(Operator { space: self.space.clone(), matrix: &self.matrix * &rhs.matrix, hermitian: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Pauli matrix σ^α on a single spin-1/2.
pub fn pauli(axis: Axis) -> Operator {
    let m = match axis {
        Axis::X => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        Axis::Y => CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        Axis::Z => CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
    };
    Operator { space: HilbertSpace::spin_half(), matrix: m, hermitian: true }
}

/// Spin operator S^α = σ^α/2 (ħ = 1).
pub fn spin(axis: Axis) -> Operator {
    pauli(axis).scale(0.5)
}

/// |↑⟩⟨↑| = (1 + σ_z)/2.
pub fn spin_up_projector() -> Operator {
    Operator::basis_projector(&HilbertSpace::spin_half(), 0, 0).expect("2x2 projector")
}

/// Truncated lowering operator with ⟨n−1|b|n⟩ = √n on Fock states 0..=n_max.
pub fn boson_annihilate(n_max: usize) -> Result<Operator> {
    let space = HilbertSpace::boson(n_max)?;
    let d = n_max + 1;
    let mut m = CMatrix::zeros(d, d);
    for n in 1..d {
        m[(n - 1, n)] = c64((n as f64).sqrt(), 0.0);
    }
    Ok(Operator { space, matrix: m, hermitian: false })
}

/// b†b on the truncated mode.
pub fn boson_number(n_max: usize) -> Result<Operator> {
    let space = HilbertSpace::boson(n_max)?;
    let diag: Vec<f64> = (0..=n_max).map(|n| n as f64).collect();
    Operator::diagonal(&space, &diag)
}

/// Nearest-neighbour hopping V Σ_n (c†_{n+1} c_n + h.c.) on an open chain,
/// represented in the one-carrier sector.
pub fn lattice_hopping(sites: usize, v: f64) -> Result<Operator> {
    if sites < 2 {
        return Err(Error::InvalidArgument("hopping needs at least two sites".into()));
    }
    let space = HilbertSpace::lattice(sites)?;
    let mut m = CMatrix::zeros(sites, sites);
    for n in 0..sites - 1 {
        m[(n, n + 1)] = c64(v, 0.0);
        m[(n + 1, n)] = c64(v, 0.0);
    }
    Ok(Operator { space, matrix: m, hermitian: true })
}

/// Site occupation c†_n c_n in the one-carrier sector.
pub fn site_projector(sites: usize, n: usize) -> Result<Operator> {
    Operator::basis_projector(&HilbertSpace::lattice(sites)?, n, n)
}

/// Position operator Σ_n n·c†_n c_n (sites counted from 0).
pub fn site_position(sites: usize) -> Result<Operator> {
    let diag: Vec<f64> = (0..sites).map(|n| n as f64).collect();
    Operator::diagonal(&HilbertSpace::lattice(sites)?, &diag)
}

/// Lifts `op` onto `target`, acting as the identity on every other slot.
pub fn embed(op: &Operator, target: &HilbertSpace, slot: usize) -> Result<Operator> {
    let local = target.single(slot)?;
    if op.space != local {
        return Err(Error::Dimension(format!("operator acts on {}, slot {slot} of {target} is {local}", op.space)));
    }
    let before: usize = target.subsystems[..slot].iter().map(|s| s.dim()).product();
    let after: usize = target.subsystems[slot + 1..].iter().map(|s| s.dim()).product();
    let m = CMatrix::identity(before, before)
        .kronecker(&op.matrix)
        .kronecker(&CMatrix::identity(after, after));
    Ok(Operator { space: target.clone(), matrix: m, hermitian: op.hermitian })
}

/// Tensor product of operators, one per subsystem in order.
pub fn tensor(ops: &[&Operator]) -> Result<Operator> {
    let first = ops.first().ok_or_else(|| Error::InvalidArgument("empty tensor product".into()))?;
    let mut subsystems = first.space.subsystems.clone();
    let mut m = first.matrix.clone();
    let mut herm = first.hermitian;
    for op in &ops[1..] {
        subsystems.extend_from_slice(&op.space.subsystems);
        m = m.kronecker(&op.matrix);
        herm &= op.hermitian;
    }
    Ok(Operator { space: HilbertSpace::new(subsystems)?, matrix: m, hermitian: herm })
}

/// Tensor product of state vectors.
pub fn tensor_state(states: &[&[C64]]) -> Vec<C64> {
    let mut out = vec![ONE];
    for s in states {
        let mut next = Vec::with_capacity(out.len() * s.len());
        for a in &out {
            for b in s.iter() {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

/// |ψ⟩⟨ψ|.
pub fn pure_density(psi: &[C64]) -> CMatrix {
    let d = psi.len();
    CMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj())
}

/// Spin-1/2 basis states.
pub fn ket_up() -> Vec<C64> {
    vec![ONE, ZERO]
}

pub fn ket_down() -> Vec<C64> {
    vec![ZERO, ONE]
}

/// Ensemble of density matrices advanced in lockstep, one per noise
/// realization.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrixBatch {
    space: HilbertSpace,
    members: Vec<CMatrix>,
    pub time: f64,
}

impl DensityMatrixBatch {
    pub fn new(space: HilbertSpace, members: Vec<CMatrix>, time: f64) -> Result<Self> {
        let d = space.dim();
        if members.is_empty() {
            return Err(Error::InvalidArgument("empty density-matrix batch".into()));
        }
        if members.iter().any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::Dimension(format!("batch member does not match dimension {d}")));
        }
        Ok(DensityMatrixBatch { space, members, time })
    }

    /// `batch` copies of the same state.
    pub fn replicate(space: HilbertSpace, rho: CMatrix, batch: usize) -> Result<Self> {
        Self::new(space, vec![rho; batch.max(1)], 0.0)
    }

    pub fn pure(space: HilbertSpace, psi: &[C64], batch: usize) -> Result<Self> {
        if psi.len() != space.dim() {
            return Err(Error::Dimension(format!("state of length {} for dimension {}", psi.len(), space.dim())));
        }
        Self::replicate(space, pure_density(psi), batch)
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn members(&self) -> &[CMatrix] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [CMatrix] {
        &mut self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Checks trace, hermiticity and positivity of every member.
    pub fn validate(&self, trace_tol: f64, herm_tol: f64, eig_tol: f64) -> Result<()> {
        for (b, m) in self.members.iter().enumerate() {
            let tr = m.trace();
            if (tr - ONE).norm() > trace_tol {
                return Err(Error::InvalidArgument(format!("member {b}: trace {tr}")));
            }
            let h = hermiticity_error(m);
            if h > herm_tol {
                return Err(Error::InvalidArgument(format!("member {b}: hermiticity error {h:e}")));
            }
            let e = crate::linalg::min_eigenvalue(m);
            if e < -eig_tol {
                return Err(Error::InvalidArgument(format!("member {b}: eigenvalue {e:e}")));
            }
        }
        Ok(())
    }
}

/// Per-member Tr(Ô ρ).
pub fn expectation(rho: &DensityMatrixBatch, op: &Operator) -> Result<Vec<C64>> {
    if rho.space != op.space {
        return Err(Error::Dimension(format!("state on {}, operator on {}", rho.space, op.space)));
    }
    Ok(rho.members.iter().map(|m| crate::linalg::trace_product(&op.matrix, m)).collect())
}

/// Per-member real expectation of a hermitian operator; the imaginary part
/// must stay below 1e-10.
pub fn expectation_real(rho: &DensityMatrixBatch, op: &Operator) -> Result<Vec<f64>> {
    if !op.hermitian {
        return Err(Error::InvalidArgument("real expectation requires a hermitian operator".into()));
    }
    let vals = expectation(rho, op)?;
    vals.iter()
        .map(|z| {
            if z.im.abs() > 1e-10 {
                Err(Error::NonFinite(format!("hermitian expectation has imaginary part {:e}", z.im)))
            } else {
                Ok(z.re)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    #[test]
    fn pauli_algebra() {
        let z = pauli(Axis::Z);
        assert_eq!(z.matrix()[(0, 0)], ONE);
        assert_eq!(z.matrix()[(1, 1)], -ONE);
        let x = pauli(Axis::X);
        let xx = (&x * &x).unwrap();
        assert!(max_abs_diff(xx.matrix(), &CMatrix::identity(2, 2)) < 1e-15);
        let y = pauli(Axis::Y);
        let comm = x.commutator(&y).unwrap();
        let expected = z.scale_complex(c64(0.0, 2.0));
        assert!(max_abs_diff(comm.matrix(), expected.matrix()) < 1e-15);
        assert!(x.is_hermitian() && y.is_hermitian() && z.is_hermitian());
    }

    #[test]
    fn boson_ladder() {
        let b = boson_annihilate(1).unwrap();
        assert_eq!(b.matrix(), &CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]));
        let b = boson_annihilate(5).unwrap();
        assert!((b.matrix()[(2, 3)].re - 3f64.sqrt()).abs() < 1e-15);
        let num = (&b.adjoint() * &b).unwrap();
        assert!((num.matrix()[(3, 3)].re - 3.0).abs() < 1e-14);
        assert!(boson_annihilate(0).is_err());
    }

    #[test]
    fn boson_truncated_commutator() {
        for n_max in 1..6 {
            let b = boson_annihilate(n_max).unwrap();
            let comm = b.commutator(&b.adjoint()).unwrap();
            let mut expected = CMatrix::identity(n_max + 1, n_max + 1);
            expected[(n_max, n_max)] -= c64((n_max + 1) as f64, 0.0);
            assert!(max_abs_diff(comm.matrix(), &expected) < 1e-13);
        }
    }

    #[test]
    fn hopping_matrix_and_spectrum() {
        let h = lattice_hopping(2, 1.0).unwrap();
        assert_eq!(h.matrix(), &CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]));
        let ev = crate::linalg::hermitian_eigenvalues(lattice_hopping(3, 1.0).unwrap().matrix());
        let s2 = 2f64.sqrt();
        for (a, b) in ev.iter().zip([-s2, 0.0, s2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(lattice_hopping(1, 1.0).is_err());
    }

    #[test]
    fn hopping_bandwidth_long_chain() {
        let v = 83.0;
        let ev = crate::linalg::hermitian_eigenvalues(lattice_hopping(150, v).unwrap().matrix());
        let width = ev[149] - ev[0];
        let closed_form = 4.0 * v * (std::f64::consts::PI / 151.0).cos();
        assert!((width - closed_form).abs() < 1e-9 * closed_form);
        assert!((width - 4.0 * v).abs() < 1e-3 * 4.0 * v);
    }

    #[test]
    fn embedding_on_two_spins() {
        let space = HilbertSpace::spins(2);
        let z0 = embed(&pauli(Axis::Z), &space, 0).unwrap();
        // |↑↓⟩ is basis index 1.
        assert_eq!(z0.matrix()[(1, 1)], ONE);
        let a = embed(&pauli(Axis::X), &space, 0).unwrap();
        let b = embed(&pauli(Axis::Y), &space, 1).unwrap();
        let ab = (&a * &b).unwrap();
        let ba = (&b * &a).unwrap();
        assert!(max_abs_diff(ab.matrix(), ba.matrix()) < 1e-15);
        let id = embed(&Operator::identity(&HilbertSpace::spin_half()), &space, 1).unwrap();
        assert_eq!(id.matrix(), &CMatrix::identity(4, 4));
        assert!(embed(&pauli(Axis::X), &space, 2).is_err());
        assert!(embed(&boson_annihilate(2).unwrap(), &space, 0).is_err());
    }

    #[test]
    fn expectation_examples() {
        let s = HilbertSpace::spin_half();
        let up = DensityMatrixBatch::pure(s.clone(), &ket_up(), 1).unwrap();
        assert_eq!(expectation_real(&up, &pauli(Axis::Z)).unwrap(), vec![1.0]);
        let mixed = DensityMatrixBatch::replicate(s.clone(), CMatrix::identity(2, 2) * c64(0.5, 0.0), 2).unwrap();
        assert_eq!(expectation_real(&mixed, &pauli(Axis::X)).unwrap(), vec![0.0, 0.0]);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DensityMatrixBatch::pure(s, &[c64(r, 0.0), c64(r, 0.0)], 1).unwrap();
        assert!((expectation_real(&plus, &pauli(Axis::X)).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(expectation(&plus, &lattice_hopping(2, 1.0).unwrap()).is_err());
    }

    #[test]
    fn hermitian_check_rejects() {
        let m = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert!(matches!(Operator::hermitian(HilbertSpace::spin_half(), m), Err(Error::NotHermitian(_))));
    }
}
