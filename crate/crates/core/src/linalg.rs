//! Dense complex matrices (backed by `nalgebra`) and the small sparse
//! triplet form used by the stepping kernels.

use nalgebra::DMatrix;
pub use num_complex::Complex64 as C64;

/// Dense complex square matrix, column-major.
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// max |m_ij − conj(m_ji)|.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// max |a_ij − b_ij|.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Real eigenvalues of the hermitian part of `m`, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()) * c64(0.5, 0.0);
    let mut ev: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m)[0]
}

/// Tr(a · b) without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// exp(−i·h·t) for hermitian `h`, through its eigendecomposition.
pub fn hermitian_propagator(h: &CMatrix, t: f64) -> CMatrix {
    let eig = h.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let n = h.nrows();
    let mut scaled = v.clone();
    for j in 0..n {
        let phase = C64::from_polar(1.0, -eig.eigenvalues[j] * t);
        for i in 0..n {
            scaled[(i, j)] *= phase;
        }
    }
    scaled * v.adjoint()
}

/// Nonzero entries of a square matrix as (row, col, value) triplets,
/// sorted row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Triplets {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl Triplets {
    pub fn from_dense(m: &CMatrix) -> Self {
        let n = m.nrows();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v != ZERO {
                    entries.push((i, j, v));
                }
            }
        }
        Triplets { dim: n, entries }
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Row-major dense buffer helpers used by the hot loops. A state of
/// dimension `n` is stored as `n*n` values with element (i, j) at `i*n + j`.
pub(crate) mod flat {
    use super::{CMatrix, C64, ZERO};

    pub fn from_matrix(m: &CMatrix, out: &mut [C64]) {
        let n = m.nrows();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = m[(i, j)];
            }
        }
    }

    pub fn to_matrix(buf: &[C64], n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |i, j| buf[i * n + j])
    }

    pub fn trace(buf: &[C64], n: usize) -> C64 {
        (0..n).map(|i| buf[i * n + i]).sum()
    }

    /// out = a · b for dense row-major n×n buffers.
    pub fn matmul(a: &[C64], b: &[C64], n: usize, out: &mut [C64]) {
        out.iter_mut().for_each(|x| *x = ZERO);
        for i in 0..n {
            for k in 0..n {
                let aik = a[i * n + k];
                if aik == ZERO {
                    continue;
                }
                let row = &b[k * n..(k + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &bkj) in dst.iter_mut().zip(row) {
                    *d += aik * bkj;
                }
            }
        }
    }

    /// out = a · b†.
    pub fn matmul_adj(a: &[C64], b: &[C64], n: usize, out: &mut [C64]) {
        for i in 0..n {
            for j in 0..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += a[i * n + k] * b[j * n + k].conj();
                }
                out[i * n + j] = acc;
            }
        }
    }

    /// out = a† · b.
    pub fn adj_matmul(a: &[C64], b: &[C64], n: usize, out: &mut [C64]) {
        out.iter_mut().for_each(|x| *x = ZERO);
        for k in 0..n {
            for i in 0..n {
                let aki = a[k * n + i].conj();
                if aki == ZERO {
                    continue;
                }
                let row = &b[k * n..(k + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &bkj) in dst.iter_mut().zip(row) {
                    *d += aki * bkj;
                }
            }
        }
    }

    /// Re Tr(a† b).
    pub fn re_inner(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
    }

    pub fn is_finite(buf: &[C64]) -> bool {
        buf.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}
