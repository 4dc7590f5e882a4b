//! Sparse-pattern Lindblad step and its reverse-mode adjoint.
//!
//! One step maps ρ to
//!
//! ```text
//! M0 = I − iδt(H0 + Σ_j c_j S_j) − ½δt Σ_k γ_k L_k†L_k
//! ρ' = M0 ρ M0† + δt Σ_k γ_k L_k ρ L_k†
//! ρ  ← ρ' / Re Tr ρ'
//! ```
//!
//! Both terms of ρ' are completely positive maps, so the step is CPTP for
//! any δt. M0 lives on the union of the sparsity patterns of its
//! ingredients, which keeps tridiagonal lattice Hamiltonians at O(n²) work
//! per step.
//!
//! Adjoints follow the convention dL = Re Σ conj(X̄_ij) dX_ij.

use std::collections::BTreeMap;

use crate::linalg::{flat, CMatrix, C64, ONE, ZERO};

pub(crate) type Entries = Vec<(usize, usize, C64)>;

fn entries_of(m: &CMatrix) -> Entries {
    let n = m.nrows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            if v != ZERO {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// out = A·x.
fn left_mul(a: &[(usize, usize, C64)], x: &[C64], n: usize, out: &mut [C64]) {
    out.iter_mut().for_each(|v| *v = ZERO);
    for &(i, j, v) in a {
        let (src, dst) = (j * n, i * n);
        for c in 0..n {
            out[dst + c] += v * x[src + c];
        }
    }
}

/// out = A†·x.
fn left_mul_adj(a: &[(usize, usize, C64)], x: &[C64], n: usize, out: &mut [C64]) {
    out.iter_mut().for_each(|v| *v = ZERO);
    for &(i, j, v) in a {
        let v = v.conj();
        let (src, dst) = (i * n, j * n);
        for c in 0..n {
            out[dst + c] += v * x[src + c];
        }
    }
}

/// out += coef · x·A†.
fn right_mul_adj_acc(x: &[C64], a: &[(usize, usize, C64)], n: usize, coef: f64, out: &mut [C64]) {
    for &(k, l, v) in a {
        let w = v.conj() * coef;
        for r in 0..n {
            out[r * n + k] += x[r * n + l] * w;
        }
    }
}

/// out += coef · x·A.
fn right_mul_acc(x: &[C64], a: &[(usize, usize, C64)], n: usize, coef: f64, out: &mut [C64]) {
    for &(i, j, v) in a {
        let w = v * coef;
        for r in 0..n {
            out[r * n + j] += x[r * n + i] * w;
        }
    }
}

/// A jump operator with its precomputed adjoint-side data.
#[derive(Debug, Clone)]
struct Jump {
    l: Entries,
    /// Use the O(nnz²) pairwise form instead of a dense intermediate.
    pairwise: bool,
}

impl Jump {
    /// out += coef · L x L†.
    fn sandwich_acc(&self, x: &[C64], n: usize, coef: f64, out: &mut [C64], tmp: &mut [C64]) {
        if self.pairwise {
            for &(i, j, a) in &self.l {
                for &(k, l, b) in &self.l {
                    out[i * n + k] += a * b.conj() * x[j * n + l] * coef;
                }
            }
        } else {
            left_mul(&self.l, x, n, tmp);
            right_mul_adj_acc(tmp, &self.l, n, coef, out);
        }
    }

    /// out += coef · L† x L.
    fn adjoint_sandwich_acc(&self, x: &[C64], n: usize, coef: f64, out: &mut [C64], tmp: &mut [C64]) {
        if self.pairwise {
            for &(i, j, a) in &self.l {
                for &(k, l, b) in &self.l {
                    out[j * n + l] += a.conj() * b * x[i * n + k] * coef;
                }
            }
        } else {
            left_mul_adj(&self.l, x, n, tmp);
            right_mul_acc(tmp, &self.l, n, coef, out);
        }
    }

    /// Re Tr(g† L x L†).
    fn inner(&self, g: &[C64], x: &[C64], n: usize, tmp: &mut [C64], tmp2: &mut [C64]) -> f64 {
        if self.pairwise {
            let mut acc = 0.0;
            for &(i, j, a) in &self.l {
                for &(k, l, b) in &self.l {
                    let z = a * b.conj() * x[j * n + l];
                    let gz = g[i * n + k];
                    acc += gz.re * z.re + gz.im * z.im;
                }
            }
            acc
        } else {
            left_mul(&self.l, x, n, tmp);
            tmp2.iter_mut().for_each(|v| *v = ZERO);
            right_mul_adj_acc(tmp, &self.l, n, 1.0, tmp2);
            flat::re_inner(g, tmp2)
        }
    }
}

/// Scratch buffers for one member; reuse across steps to avoid allocation.
#[derive(Debug, Clone)]
pub struct Workspace {
    m0: Entries,
    t: Vec<C64>,
    r: Vec<C64>,
    g: Vec<C64>,
    tmp: Vec<C64>,
    tmp2: Vec<C64>,
    m0bar: Vec<C64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Workspace {
            m0: Vec::new(),
            t: vec![ZERO; n * n],
            r: vec![ZERO; n * n],
            g: vec![ZERO; n * n],
            tmp: vec![ZERO; n * n],
            tmp2: vec![ZERO; n * n],
            m0bar: Vec::new(),
        }
    }
}

/// Failure inside a step: the normalization vanished or a value became
/// non-finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepFailure;

#[derive(Debug, Clone)]
pub struct LindbladKernel {
    n: usize,
    pattern: Vec<(usize, usize)>,
    identity: Vec<C64>,
    h0: Vec<C64>,
    terms: Vec<Vec<(usize, C64)>>,
    ltl: Vec<Vec<(usize, C64)>>,
    jumps: Vec<Jump>,
}

impl LindbladKernel {
    /// Builds the kernel for H(t) = h0 + Σ_j c_j(t)·terms[j] and the given
    /// jump operators. All matrices must be n×n.
    pub fn new(h0: &CMatrix, terms: &[CMatrix], jumps: &[CMatrix]) -> Self {
        let n = h0.nrows();
        let h0_e = entries_of(h0);
        let term_e: Vec<Entries> = terms.iter().map(entries_of).collect();
        let ltl_e: Vec<Entries> = jumps.iter().map(|l| entries_of(&(l.adjoint() * l))).collect();
        let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for i in 0..n {
            index.insert((i, i), 0);
        }
        for list in std::iter::once(&h0_e).chain(term_e.iter()).chain(ltl_e.iter()) {
            for &(i, j, _) in list {
                index.insert((i, j), 0);
            }
        }
        let pattern: Vec<(usize, usize)> = index.keys().copied().collect();
        for (e, key) in pattern.iter().enumerate() {
            index.insert(*key, e);
        }
        let scatter = |list: &Entries| -> Vec<(usize, C64)> { list.iter().map(|&(i, j, v)| (index[&(i, j)], v)).collect() };
        let mut identity = vec![ZERO; pattern.len()];
        let mut h0v = vec![ZERO; pattern.len()];
        for (e, &(i, j)) in pattern.iter().enumerate() {
            if i == j {
                identity[e] = ONE;
            }
        }
        for (e, v) in scatter(&h0_e) {
            h0v[e] = v;
        }
        let jumps = jumps
            .iter()
            .map(|l| {
                let l = entries_of(l);
                let pairwise = l.len() <= 4 * n.max(1);
                Jump { l, pairwise }
            })
            .collect();
        LindbladKernel {
            n,
            terms: term_e.iter().map(scatter).collect(),
            ltl: ltl_e.iter().map(scatter).collect(),
            pattern,
            identity,
            h0: h0v,
            jumps,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    pub fn pattern_len(&self) -> usize {
        self.pattern.len()
    }

    fn fill_m0(&self, coeffs: &[f64], rates: &[f64], dt: f64, out: &mut Entries) {
        out.clear();
        let mut h = self.h0.clone();
        for (term, &c) in self.terms.iter().zip(coeffs) {
            if c != 0.0 {
                for &(e, v) in term {
                    h[e] += v * c;
                }
            }
        }
        let mut vals: Vec<C64> = self.identity.iter().zip(&h).map(|(id, h)| id + C64::new(h.im, -h.re) * dt).collect();
        for (ltl, &g) in self.ltl.iter().zip(rates) {
            if g != 0.0 {
                for &(e, v) in ltl {
                    vals[e] -= v * (0.5 * dt * g);
                }
            }
        }
        out.extend(self.pattern.iter().zip(vals).map(|(&(i, j), v)| (i, j, v)));
    }

    /// Unnormalized ρ' into ws.r (with ws.t = M0ρ); returns Re Tr ρ'.
    fn forward_into(&self, rho: &[C64], coeffs: &[f64], rates: &[f64], dt: f64, ws: &mut Workspace) -> f64 {
        let n = self.n;
        let mut m0 = std::mem::take(&mut ws.m0);
        self.fill_m0(coeffs, rates, dt, &mut m0);
        left_mul(&m0, rho, n, &mut ws.t);
        ws.r.iter_mut().for_each(|v| *v = ZERO);
        right_mul_adj_acc(&ws.t, &m0, n, 1.0, &mut ws.r);
        for (jump, &g) in self.jumps.iter().zip(rates) {
            if g != 0.0 {
                jump.sandwich_acc(rho, n, dt * g, &mut ws.r, &mut ws.tmp);
            }
        }
        ws.m0 = m0;
        flat::trace(&ws.r, n).re
    }

    /// Advances `rho` (row-major n×n) by one step in place.
    pub fn step(
        &self,
        rho: &mut [C64],
        coeffs: &[f64],
        rates: &[f64],
        dt: f64,
        ws: &mut Workspace,
    ) -> Result<(), StepFailure> {
        let s = self.forward_into(rho, coeffs, rates, dt, ws);
        if !(s > 0.0 && s.is_finite()) {
            return Err(StepFailure);
        }
        let inv = 1.0 / s;
        for (d, v) in rho.iter_mut().zip(&ws.r) {
            *d = v * inv;
        }
        Ok(())
    }

    /// Reverse pass of one step. On entry `adj` holds ∂L/∂ρ_out; on exit it
    /// holds ∂L/∂ρ_in. Gradients with respect to the term coefficients and
    /// the jump rates are accumulated into `coeff_bar` and `rate_bar`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward(
        &self,
        rho_in: &[C64],
        adj: &mut [C64],
        coeffs: &[f64],
        rates: &[f64],
        dt: f64,
        coeff_bar: &mut [f64],
        rate_bar: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<(), StepFailure> {
        let n = self.n;
        let s = self.forward_into(rho_in, coeffs, rates, dt, ws);
        if !(s > 0.0 && s.is_finite()) {
            return Err(StepFailure);
        }
        // Quotient rule of the normalization.
        let shift = flat::re_inner(adj, &ws.r) / (s * s);
        for (g, a) in ws.g.iter_mut().zip(adj.iter()) {
            *g = a / s;
        }
        for i in 0..n {
            ws.g[i * n + i] -= shift;
        }
        // ρ̄ = M0† G M0 + δt Σ γ_k L_k† G L_k.
        let m0 = std::mem::take(&mut ws.m0);
        left_mul_adj(&m0, &ws.g, n, &mut ws.tmp);
        adj.iter_mut().for_each(|v| *v = ZERO);
        right_mul_acc(&ws.tmp, &m0, n, 1.0, adj);
        for (k, (jump, &g)) in self.jumps.iter().zip(rates).enumerate() {
            if g != 0.0 {
                jump.adjoint_sandwich_acc(&ws.g, n, dt * g, adj, &mut ws.tmp);
            }
            rate_bar[k] += dt * jump.inner(&ws.g, rho_in, n, &mut ws.tmp, &mut ws.tmp2);
        }
        // M̄0 = (G + G†)·M0ρ on the pattern (ρ hermitian).
        ws.m0bar.clear();
        for &(i, j, _) in &m0 {
            let mut acc = ZERO;
            for k in 0..n {
                acc += (ws.g[i * n + k] + ws.g[k * n + i].conj()) * ws.t[k * n + j];
            }
            ws.m0bar.push(acc);
        }
        ws.m0 = m0;
        for (term, cb) in self.terms.iter().zip(coeff_bar.iter_mut()) {
            let mut acc = 0.0;
            for &(e, v) in term {
                // Re(conj(m̄) · (−iδt) v)
                let z = C64::new(v.im, -v.re) * dt;
                let m = ws.m0bar[e];
                acc += m.re * z.re + m.im * z.im;
            }
            *cb += acc;
        }
        for (ltl, rb) in self.ltl.iter().zip(rate_bar.iter_mut()) {
            let mut acc = 0.0;
            for &(e, v) in ltl {
                let m = ws.m0bar[e];
                acc -= 0.5 * dt * (m.re * v.re + m.im * v.im);
            }
            *rb += acc;
        }
        if !flat::is_finite(adj) {
            return Err(StepFailure);
        }
        Ok(())
    }
}
