//! Stacked, preconditioned dual problem shared by every relaxation.
//!
//! The dual constraint matrix stacks the constraint blocks as
//! `[A; -A; Abar; -Abar; Aeq]`. Every block row is either a row of
//! `C = [A; Abar; Aeq]` or its negation, so only the scaled `C` is stored
//! and the stacked quantities are recovered through [`DualData::row_source`].
//!
//! Rows of `A` whose bound is infinite are permanently disabled: their
//! multiplier is held at zero and they never enter a stopping test.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::problem::MiqpProblem;

/// How the Lipschitz constant of the dual gradient is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LipschitzEstimate {
    /// Largest eigenvalue of the dual Hessian by power iteration.
    #[default]
    MaxEigenvalue,
    /// Frobenius norm of the dual Hessian.
    Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    /// Jacobi row scaling so that the dual Hessian has unit diagonal.
    pub precondition: bool,
    pub lipschitz: LipschitzEstimate,
    pub power_tol: f64,
    pub power_max_iter: usize,
    /// Multiplier applied to the power-iteration estimate.
    pub safety_factor: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            precondition: true,
            lipschitz: LipschitzEstimate::MaxEigenvalue,
            power_tol: 1e-8,
            power_max_iter: 500,
            safety_factor: 1.001,
        }
    }
}

/// Kind of a stacked constraint row within a stacked block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Upper,
    Lower,
    BarUpper,
    BarLower,
    Equality,
}

/// Dual multipliers in stacked layout: `lambda` has length `2(m+p)`,
/// `nu` has length `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
}

impl DualVector {
    pub fn zeros(n_ineq: usize, q: usize) -> Self {
        Self {
            lambda: DVector::zeros(n_ineq),
            nu: DVector::zeros(q),
        }
    }

    /// `||(lambda, nu)||_inf`.
    pub fn norm_inf(&self) -> f64 {
        self.lambda.amax().max(self.nu.amax())
    }
}

/// Matrix stored dense or in compressed rows, whichever is cheaper to apply.
#[derive(Debug, Clone)]
enum Operator {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix<f64>),
}

impl Operator {
    /// Below this fill ratio the compressed form is used.
    const SPARSE_FILL: f64 = 0.25;

    fn new(a: &DMatrix<f64>) -> Self {
        let nnz = a.iter().filter(|x| **x != 0.0).count();
        let size = a.nrows() * a.ncols();
        if size > 0 && (nnz as f64) < Self::SPARSE_FILL * size as f64 {
            Operator::Sparse(CsrMatrix::from(&CooMatrix::from(a)))
        } else {
            Operator::Dense(a.clone())
        }
    }

    /// Rough flop count of one product.
    fn cost(&self) -> usize {
        match self {
            Operator::Dense(a) => a.nrows() * a.ncols(),
            Operator::Sparse(a) => 2 * a.nnz() + a.nrows(),
        }
    }

    /// `out = beta out + alpha A x`.
    fn gemv(&self, alpha: f64, x: &DVector<f64>, beta: f64, out: &mut DVector<f64>) {
        match self {
            Operator::Dense(a) => out.gemv(alpha, a, x, beta),
            Operator::Sparse(a) => {
                for (i, row) in a.row_iter().enumerate() {
                    let mut acc = 0.0;
                    for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                        acc += v * x[j];
                    }
                    out[i] = if beta == 0.0 {
                        alpha * acc
                    } else {
                        beta * out[i] + alpha * acc
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum HotPath {
    /// `v = v_free - H y`.
    Condensed(Operator),
    /// `z = z_free - M y`, then `v = Cs z`.
    TwoStep(Operator, Operator),
}

#[derive(Debug, Clone)]
pub struct DualData {
    n: usize,
    m: usize,
    p: usize,
    q: usize,
    /// Scaled `C = [A; Abar; Aeq]`, shape `(m+p+q) x n`.
    cs: DMatrix<f64>,
    /// Scaling factor of each row of `C`, shared by its stacked +/- copies.
    theta: DVector<f64>,
    /// Scaled upper bounds `theta * (u; ubar; beq)`; zero where disabled.
    b_up: DVector<f64>,
    /// Scaled lower bounds `theta * (l; lbar)`; zero where disabled.
    b_lo: DVector<f64>,
    /// Enabled flags for the stacked inequality rows (length `2(m+p)`).
    enabled: Vec<bool>,
    /// `Q^{-1} Cs'`, shape `n x (m+p+q)`.
    qinv_ct: DMatrix<f64>,
    /// `Cs Q^{-1} Cs'`, kept when it is cheaper than two products.
    h_cond: Option<DMatrix<f64>>,
    /// Operators used by the per-iteration product `y -> Cs z`.
    hot: HotPath,
    /// `-Q^{-1} c`.
    z_free: DVector<f64>,
    /// `Cs z_free`.
    v_free: DVector<f64>,
    /// `c' Q^{-1} c`.
    c_qinv_c: f64,
    lipschitz: f64,
    lipschitz_fallback: bool,
    chol: Cholesky<f64, Dyn>,
    preconditioned: bool,
}

impl DualData {
    pub fn new(prob: &MiqpProblem) -> Result<Self> {
        Self::with_options(prob, &DualOptions::default())
    }

    pub fn with_options(prob: &MiqpProblem, opts: &DualOptions) -> Result<Self> {
        let d = prob.data();
        let (n, m, p, q) = (prob.n(), prob.m(), prob.p(), prob.q_eq());
        let r = m + p + q;

        let mut c = DMatrix::zeros(r, n);
        c.rows_mut(0, m).copy_from(&d.a);
        c.rows_mut(m, p).copy_from(&d.a_bar);
        c.rows_mut(m + p, q).copy_from(&d.a_eq);
        for i in 0..r {
            if c.row(i).iter().all(|&x| x == 0.0) {
                let (field, row) = if i < m {
                    ("A", i)
                } else if i < m + p {
                    ("Abar", i - m)
                } else {
                    ("Aeq", i - m - p)
                };
                return Err(Error::ZeroRow {
                    field: field.into(),
                    row,
                });
            }
        }

        let chol = prob.cholesky().clone();
        let l_lower = chol.l();

        // G' = L^{-1} C', so that C Q^{-1} C' = G G'.
        let mut gt = c.transpose();
        if r > 0 && !l_lower.solve_lower_triangular_mut(&mut gt) {
            return Err(Error::NotPositiveDefinite);
        }
        let mut theta = DVector::from_element(r, 1.0);
        if opts.precondition {
            for i in 0..r {
                theta[i] = 1.0 / gt.column(i).norm();
            }
            for i in 0..r {
                gt.column_mut(i).scale_mut(theta[i]);
                c.row_mut(i).scale_mut(theta[i]);
            }
        }

        let mut enabled = vec![true; 2 * (m + p)];
        let mut b_up = DVector::zeros(r);
        let mut b_lo = DVector::zeros(r);
        for i in 0..m {
            if d.u[i].is_finite() {
                b_up[i] = theta[i] * d.u[i];
            } else {
                enabled[i] = false;
            }
            if d.l[i].is_finite() {
                b_lo[i] = theta[i] * d.l[i];
            } else {
                enabled[m + i] = false;
            }
        }
        for i in 0..p {
            b_up[m + i] = theta[m + i] * d.u_bar[i];
            b_lo[m + i] = theta[m + i] * d.l_bar[i];
        }
        for i in 0..q {
            b_up[m + p + i] = theta[m + p + i] * d.b_eq[i];
        }

        // M = Q^{-1} Cs' = L'^{-1} G'.
        let mut qinv_ct = gt.clone();
        if r > 0 {
            l_lower.tr_solve_lower_triangular_mut(&mut qinv_ct);
        }
        let z_free = -chol.solve(&d.c);
        let v_free = &c * &z_free;
        let c_qinv_c = -d.c.dot(&z_free);

        // Multiplicity of each condensed row among enabled stacked rows.
        let weight: Vec<f64> = (0..r)
            .map(|i| {
                if i < m + p {
                    let up = if i < m { enabled[i] } else { true };
                    let lo = if i < m { enabled[m + i] } else { true };
                    up as u8 as f64 + lo as u8 as f64
                } else {
                    1.0
                }
            })
            .collect();

        // Also formed for moderate r, where a sparse H can beat two products.
        let need_h = r <= 2 * n || r <= 2000 || opts.lipschitz == LipschitzEstimate::Frobenius;
        let mut h_cond = need_h.then(|| gt.transpose() * &gt);

        let mut lipschitz_fallback = false;
        let lipschitz = if r == 0 {
            1.0
        } else {
            match opts.lipschitz {
                LipschitzEstimate::Frobenius => frobenius(h_cond.as_ref().unwrap(), &weight),
                LipschitzEstimate::MaxEigenvalue => {
                    match power_iteration(&gt, &weight, opts.power_tol, opts.power_max_iter) {
                        Some(lam) => lam * opts.safety_factor,
                        None => {
                            lipschitz_fallback = true;
                            let h = h_cond
                                .take()
                                .unwrap_or_else(|| gt.transpose() * &gt);
                            let f = frobenius(&h, &weight);
                            if need_h {
                                h_cond = Some(h);
                            }
                            f
                        }
                    }
                }
            }
        };
        let lipschitz = if lipschitz > 0.0 { lipschitz } else { 1.0 };

        let two_step = (Operator::new(&qinv_ct), Operator::new(&c));
        let hot = match &h_cond {
            Some(h) => {
                let hop = Operator::new(h);
                if hop.cost() <= two_step.0.cost() + two_step.1.cost() {
                    HotPath::Condensed(hop)
                } else {
                    HotPath::TwoStep(two_step.0, two_step.1)
                }
            }
            None => HotPath::TwoStep(two_step.0, two_step.1),
        };

        Ok(Self {
            n,
            m,
            p,
            q,
            cs: c,
            theta,
            b_up,
            b_lo,
            enabled,
            qinv_ct,
            h_cond,
            hot,
            z_free,
            v_free,
            c_qinv_c,
            lipschitz,
            lipschitz_fallback,
            chol,
            preconditioned: opts.precondition,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of stacked inequality rows, `2(m+p)`.
    pub fn n_ineq(&self) -> usize {
        2 * (self.m + self.p)
    }

    /// Total number of stacked rows, `2(m+p)+q`.
    pub fn n_rows(&self) -> usize {
        self.n_ineq() + self.q
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// True when the power iteration did not converge and `||H||_F` was used.
    pub fn used_frobenius_fallback(&self) -> bool {
        self.lipschitz_fallback
    }

    pub fn is_preconditioned(&self) -> bool {
        self.preconditioned
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Whether a stacked inequality row takes part in the dual problem.
    pub fn is_enabled(&self, j: usize) -> bool {
        self.enabled[j]
    }

    pub fn block(&self, j: usize) -> Block {
        let (m, p) = (self.m, self.p);
        if j < m {
            Block::Upper
        } else if j < 2 * m {
            Block::Lower
        } else if j < 2 * m + p {
            Block::BarUpper
        } else if j < 2 * (m + p) {
            Block::BarLower
        } else {
            Block::Equality
        }
    }

    /// Condensed row and sign of stacked row `j`.
    pub fn row_source(&self, j: usize) -> (usize, f64) {
        let (m, p) = (self.m, self.p);
        match self.block(j) {
            Block::Upper => (j, 1.0),
            Block::Lower => (j - m, -1.0),
            Block::BarUpper => (j - m, 1.0),
            Block::BarLower => (j - m - p, -1.0),
            Block::Equality => (j - m - p, 1.0),
        }
    }

    /// Stacked indices `(j_u, j_l)` of the upper and lower rows of binary `i`.
    pub fn row_map(&self, i: usize) -> (usize, usize) {
        (2 * self.m + i, 2 * self.m + self.p + i)
    }

    /// Scaling factor of every stacked row.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_fn(self.n_rows(), |j, _| self.theta[self.row_source(j).0])
    }

    /// Scaling factor of the rows belonging to binary `i`.
    pub fn theta_binary(&self, i: usize) -> f64 {
        self.theta[self.m + i]
    }

    /// Scaled stacked matrix, explicitly assembled (diagnostics and tests).
    pub fn stacked_matrix(&self) -> DMatrix<f64> {
        let rows = self.n_rows();
        DMatrix::from_fn(rows, self.n, |j, k| {
            let (i, sg) = self.row_source(j);
            sg * self.cs[(i, k)]
        })
    }

    /// Scaled stacked right-hand side `b`. Disabled rows carry zero.
    pub fn b_stacked(&self) -> DVector<f64> {
        DVector::from_fn(self.n_rows(), |j, _| self.b_of(j))
    }

    fn b_of(&self, j: usize) -> f64 {
        let (i, sg) = self.row_source(j);
        if sg > 0.0 {
            self.b_up[i]
        } else {
            -self.b_lo[i]
        }
    }

    /// `d = b + A_s Q^{-1} c`, stacked.
    pub fn d_stacked(&self) -> DVector<f64> {
        DVector::from_fn(self.n_rows(), |j, _| {
            let (i, sg) = self.row_source(j);
            self.b_of(j) - sg * self.v_free[i]
        })
    }

    /// Dual Hessian `A_s Q^{-1} A_s'` over all stacked rows, explicitly.
    pub fn dual_hessian(&self) -> DMatrix<f64> {
        let a = self.stacked_matrix();
        let x = self.chol.solve(&a.transpose());
        &a * x
    }

    /// Collapse stacked multipliers onto the rows of `C`.
    pub fn condense(&self, eta: &DualVector) -> DVector<f64> {
        let (m, p, q) = (self.m, self.p, self.q);
        let mp = m + p;
        let mut y = DVector::zeros(mp + q);
        for i in 0..m {
            y[i] = eta.lambda[i] - eta.lambda[m + i];
        }
        for i in 0..p {
            y[m + i] = eta.lambda[2 * m + i] - eta.lambda[2 * m + p + i];
        }
        for i in 0..q {
            y[mp + i] = eta.nu[i];
        }
        y
    }

    /// `A_s' eta` computed from the condensed multipliers.
    pub fn transpose_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        self.cs.tr_mul(y)
    }

    /// Primal point `z = -Q^{-1} A_s' eta - Q^{-1} c` and `v = Cs z`.
    pub fn primal(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let z = &self.z_free - &self.qinv_ct * y;
        let v = match &self.h_cond {
            Some(h) => &self.v_free - h * y,
            None => &self.cs * &z,
        };
        (z, v)
    }

    /// `v = Cs z` without forming `z` when the condensed Hessian is stored.
    pub fn constraint_values(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.h_cond {
            Some(h) => &self.v_free - h * y,
            None => {
                let z = &self.z_free - &self.qinv_ct * y;
                &self.cs * z
            }
        }
    }

    pub fn primal_from(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.z_free - &self.qinv_ct * y
    }

    /// `y` for stacked multipliers `(lambda, nu)` into a preallocated buffer.
    pub fn condense_into(&self, lambda: &DVector<f64>, nu: &DVector<f64>, y: &mut DVector<f64>) {
        let (m, p, q) = (self.m, self.p, self.q);
        for i in 0..m {
            y[i] = lambda[i] - lambda[m + i];
        }
        for i in 0..p {
            y[m + i] = lambda[2 * m + i] - lambda[2 * m + p + i];
        }
        for i in 0..q {
            y[m + p + i] = nu[i];
        }
    }

    /// In-place variant of [`constraint_values`](Self::constraint_values);
    /// `z_tmp` is scratch of length `n`.
    pub fn constraint_values_into(
        &self,
        y: &DVector<f64>,
        v: &mut DVector<f64>,
        z_tmp: &mut DVector<f64>,
    ) {
        match &self.hot {
            HotPath::Condensed(h) => {
                v.copy_from(&self.v_free);
                h.gemv(-1.0, y, 1.0, v);
            }
            HotPath::TwoStep(mq, cs) => {
                z_tmp.copy_from(&self.z_free);
                mq.gemv(-1.0, y, 1.0, z_tmp);
                cs.gemv(1.0, z_tmp, 0.0, v);
            }
        }
    }

    /// Stacked gradient `A_s z - b` (unscaled by `L`) given `v = Cs z`.
    /// Disabled rows get zero.
    pub fn gradient(&self, v: &DVector<f64>, out_ineq: &mut DVector<f64>, out_eq: &mut DVector<f64>) {
        let (m, p, q) = (self.m, self.p, self.q);
        let mp = m + p;
        for i in 0..m {
            out_ineq[i] = if self.enabled[i] { v[i] - self.b_up[i] } else { 0.0 };
            out_ineq[m + i] = if self.enabled[m + i] {
                self.b_lo[i] - v[i]
            } else {
                0.0
            };
        }
        for i in 0..p {
            out_ineq[2 * m + i] = v[m + i] - self.b_up[m + i];
            out_ineq[2 * m + p + i] = self.b_lo[m + i] - v[m + i];
        }
        for i in 0..q {
            out_eq[i] = v[mp + i] - self.b_up[mp + i];
        }
    }

    /// `Abar_i z` recovered from the scaled constraint values.
    pub fn binary_value(&self, v: &DVector<f64>, i: usize) -> f64 {
        v[self.m + i] / self.theta[self.m + i]
    }

    /// Diagonal entry of the dual Hessian for the rows of binary `i`.
    pub fn h_diag_binary(&self, i: usize) -> f64 {
        let k = self.m + i;
        self.cs.row(k).transpose().dot(&self.qinv_ct.column(k))
    }

    /// `(lbar_i + ubar_i) / 2`.
    pub fn binary_midpoint(&self, i: usize) -> f64 {
        let k = self.m + i;
        0.5 * (self.b_lo[k] + self.b_up[k]) / self.theta[k]
    }

    /// `b' eta` over enabled rows.
    pub fn b_dot(&self, eta: &DualVector) -> f64 {
        let mut s = 0.0;
        for j in 0..self.n_ineq() {
            if self.enabled[j] {
                s += self.b_of(j) * eta.lambda[j];
            }
        }
        let off = self.m + self.p;
        for k in 0..self.q {
            s += self.b_up[off + k] * eta.nu[k];
        }
        s
    }

    /// `d' eta` given the condensed multipliers `y` of `eta`.
    pub fn d_dot(&self, eta: &DualVector, y: &DVector<f64>) -> f64 {
        self.b_dot(eta) - self.v_free.dot(y)
    }

    /// Dual objective from `a = A_s' eta`:
    /// `-1/2 a'Q^{-1}a - b'eta - (Q^{-1}c)'(a + c/2)`.
    pub fn dual_value(&self, eta: &DualVector, y: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let qa = &self.qinv_ct * y;
        -0.5 * a.dot(&qa) - self.b_dot(eta) + self.z_free.dot(a) - 0.5 * self.c_qinv_c
    }

    /// `Psi(eta)`, computing the needed products.
    pub fn psi(&self, eta: &DualVector) -> f64 {
        let y = self.condense(eta);
        let a = self.transpose_mul(&y);
        self.dual_value(eta, &y, &a)
    }
}

fn frobenius(h: &DMatrix<f64>, weight: &[f64]) -> f64 {
    let r = h.nrows();
    let mut s = 0.0;
    for j in 0..r {
        for i in 0..r {
            s += weight[i] * weight[j] * h[(i, j)] * h[(i, j)];
        }
    }
    s.sqrt()
}

/// Largest eigenvalue of `G' W G` where `gt = G'` is `n x r`.
fn power_iteration(gt: &DMatrix<f64>, weight: &[f64], tol: f64, max_iter: usize) -> Option<f64> {
    let n = gt.nrows();
    let w = DVector::from_column_slice(weight);
    // Deterministic start vector with no special structure.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.7548776662).fract());
    x.normalize_mut();
    let mut est = 0.0;
    for _ in 0..max_iter {
        let y = gt.tr_mul(&x).component_mul(&w);
        let kx = gt * y;
        let rq = x.dot(&kx);
        let nrm = kx.norm();
        if nrm == 0.0 {
            return Some(0.0);
        }
        x = kx / nrm;
        if (rq - est).abs() <= tol * rq.abs().max(f64::MIN_POSITIVE) {
            return Some(rq.max(est));
        }
        est = rq;
    }
    None
}
