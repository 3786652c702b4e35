//! Slow reference solvers: a dense QP solver by active-set enumeration (with
//! a dual active-set method for instances whose subset count is too large)
//! and exhaustive enumeration of binary fixings.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{MiqpProblem, RelaxationSpec};

/// Largest `p` accepted by [`enumerate_miqp`].
pub const MAX_ENUMERATE_P: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleMethod {
    /// Enumerate when the subset count is within budget, otherwise use the
    /// dual active-set method.
    #[default]
    Auto,
    Enumerate,
    DualActiveSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub status: OracleStatus,
    /// Empty when infeasible.
    pub z: DVector<f64>,
    /// `V(z)` without offset; `+inf` when infeasible.
    pub cost: f64,
    /// Active inequality rows, numbered as the stacked dual rows
    /// (`A` upper, `A` lower, `Abar` upper, `Abar` lower).
    pub active_set: Vec<usize>,
    /// For MIQP results: `true` where the binary sits at its upper bound.
    pub fixing: Option<Vec<bool>>,
    /// Largest scaled KKT residual at the returned point.
    pub kkt_residual: f64,
    /// Number of binary fixings examined (MIQP only).
    pub fixings_visited: usize,
}

impl OracleResult {
    fn infeasible() -> Self {
        Self {
            status: OracleStatus::Infeasible,
            z: DVector::zeros(0),
            cost: f64::INFINITY,
            active_set: Vec::new(),
            fixing: None,
            kkt_residual: 0.0,
            fixings_visited: 0,
        }
    }
}

/// Dense QP `min 1/2 x'Qx + c'x` s.t. `E x = e`, `N x >= b`.
struct DenseQp<'a> {
    q: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
    eq: Vec<(DVector<f64>, f64)>,
    ineq: Vec<(DVector<f64>, f64)>,
    ids: Vec<usize>,
    /// For each inequality, the one on the opposite side of the same row.
    twin: Vec<Option<usize>>,
}

impl<'a> DenseQp<'a> {
    fn from_problem(prob: &'a MiqpProblem, spec: &RelaxationSpec) -> Self {
        let d = prob.data();
        let (m, p) = (prob.m(), prob.p());
        let mut eq = Vec::new();
        let mut ineq = Vec::new();
        let mut ids = Vec::new();
        let mut twin = Vec::new();
        let mut push_pair = |ineq: &mut Vec<(DVector<f64>, f64)>,
                             row: DVector<f64>,
                             lo: f64,
                             hi: f64,
                             id_up: usize,
                             id_lo: usize| {
            let start = ineq.len();
            let mut k = 0;
            if hi.is_finite() {
                ineq.push((-row.clone(), -hi));
                ids.push(id_up);
                k += 1;
            }
            if lo.is_finite() {
                ineq.push((row, lo));
                ids.push(id_lo);
                k += 1;
            }
            if k == 2 {
                twin.push(Some(start + 1));
                twin.push(Some(start));
            } else {
                twin.extend(std::iter::repeat_n(None, k));
            }
        };
        for i in 0..m {
            let row = d.a.row(i).transpose();
            push_pair(&mut ineq, row, d.l[i], d.u[i], i, m + i);
        }
        for i in 0..p {
            let row = d.a_bar.row(i).transpose();
            if spec.fixed_lower.contains(&i) {
                eq.push((row, d.l_bar[i]));
            } else if spec.fixed_upper.contains(&i) {
                eq.push((row, d.u_bar[i]));
            } else {
                push_pair(&mut ineq, row, d.l_bar[i], d.u_bar[i], 2 * m + i, 2 * m + p + i);
            }
        }
        for i in 0..prob.q_eq() {
            eq.push((d.a_eq.row(i).transpose(), d.b_eq[i]));
        }
        Self {
            q: &d.q,
            c: &d.c,
            eq,
            ineq,
            ids,
            twin,
        }
    }

    fn n(&self) -> usize {
        self.c.len()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(self.q * x)) + self.c.dot(x)
    }

    fn scale(&self) -> f64 {
        let mut s: f64 = 1.0;
        for (_, b) in self.eq.iter().chain(self.ineq.iter()) {
            s = s.max(b.abs());
        }
        s
    }

    /// Solve the equality-constrained KKT system for equalities plus the
    /// inequalities in `active`. Returns `(x, u_eq, u_active)`.
    fn solve_kkt(&self, active: &[usize]) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let n = self.n();
        let ne = self.eq.len();
        let k = ne + active.len();
        let mut e = DMatrix::zeros(k, n);
        let mut rhs_b = DVector::zeros(k);
        for (r, (row, b)) in self.eq.iter().enumerate() {
            e.row_mut(r).copy_from(&row.transpose());
            rhs_b[r] = *b;
        }
        for (r, &a) in active.iter().enumerate() {
            e.row_mut(ne + r).copy_from(&self.ineq[a].0.transpose());
            rhs_b[ne + r] = self.ineq[a].1;
        }
        if k > n {
            return None;
        }
        if k > 0 {
            let sv = e.clone().svd(false, false).singular_values;
            let smax = sv.max();
            if sv.min() <= 1e-10 * smax.max(1.0) {
                return None;
            }
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(self.q);
        kkt.view_mut((0, n), (n, k)).copy_from(&(-e.transpose()));
        kkt.view_mut((n, 0), (k, n)).copy_from(&e);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-self.c));
        rhs.rows_mut(n, k).copy_from(&rhs_b);
        let sol = kkt.lu().solve(&rhs)?;
        let x = sol.rows(0, n).into_owned();
        let u_eq = sol.rows(n, ne).into_owned();
        let u_act = sol.rows(n + ne, active.len()).into_owned();
        Some((x, u_eq, u_act))
    }

    /// Scaled KKT residual of `(x, u_eq, u_ineq)` with `u_ineq` indexed by
    /// inequality.
    fn kkt_residual(&self, x: &DVector<f64>, u_eq: &DVector<f64>, u_in: &DVector<f64>) -> f64 {
        let mut grad = self.q * x + self.c;
        let gscale = 1.0f64.max(grad.amax()).max((self.q * x).amax()).max(self.c.amax());
        for (r, (row, _)) in self.eq.iter().enumerate() {
            grad.axpy(-u_eq[r], row, 1.0);
        }
        for (r, (row, _)) in self.ineq.iter().enumerate() {
            grad.axpy(-u_in[r], row, 1.0);
        }
        let mut res = grad.amax() / gscale;
        let bscale = self.scale();
        for (row, b) in &self.eq {
            res = res.max((row.dot(x) - b).abs() / bscale);
        }
        for (r, (row, b)) in self.ineq.iter().enumerate() {
            let s = row.dot(x) - b;
            res = res.max((-s).max(0.0) / bscale);
            res = res.max((-u_in[r]).max(0.0) / gscale);
            res = res.max((u_in[r] * s).abs() / (gscale * bscale));
        }
        res
    }

    fn finish(&self, x: DVector<f64>, u_eq: DVector<f64>, active: &[usize], u_act: &DVector<f64>) -> OracleResult {
        let mut u_in = DVector::zeros(self.ineq.len());
        for (r, &a) in active.iter().enumerate() {
            u_in[a] = u_act[r];
        }
        let kkt = self.kkt_residual(&x, &u_eq, &u_in);
        let mut ids: Vec<usize> = active.iter().map(|&a| self.ids[a]).collect();
        ids.sort_unstable();
        OracleResult {
            status: OracleStatus::Optimal,
            cost: self.objective(&x),
            z: x,
            active_set: ids,
            fixing: None,
            kkt_residual: kkt,
            fixings_visited: 0,
        }
    }

    fn consistent(&self, x: &DVector<f64>, active: &[usize], u_act: &DVector<f64>) -> bool {
        let tol = 1e-9;
        let bscale = self.scale();
        let uscale = 1.0f64.max(u_act.amax());
        if u_act.iter().any(|&u| u < -tol * uscale) {
            return false;
        }
        self.ineq.iter().enumerate().all(|(r, (row, b))| {
            active.contains(&r) || row.dot(x) - b >= -tol * bscale
        })
    }

    fn subset_count(&self) -> u128 {
        let ni = self.ineq.len() as u128;
        let kmax = (self.n().saturating_sub(self.eq.len()) as u128).min(ni);
        let mut total: u128 = 0;
        let mut binom: u128 = 1;
        for k in 0..=kmax {
            total = total.saturating_add(binom);
            binom = binom.saturating_mul(ni - k) / (k + 1);
        }
        total
    }

    fn enumerate(&self) -> Option<OracleResult> {
        let ni = self.ineq.len();
        let kmax = self.n().saturating_sub(self.eq.len()).min(ni);
        for k in 0..=kmax {
            let mut comb: Vec<usize> = (0..k).collect();
            loop {
                let twin_clash = comb.iter().any(|&a| {
                    self.twin[a].is_some_and(|t| comb.binary_search(&t).is_ok())
                });
                if !twin_clash {
                    if let Some((x, u_eq, u_act)) = self.solve_kkt(&comb) {
                        if self.consistent(&x, &comb, &u_act) {
                            return Some(self.finish(x, u_eq, &comb, &u_act));
                        }
                    }
                }
                if !next_combination(&mut comb, ni) {
                    break;
                }
            }
        }
        None
    }

    /// Goldfarb-Idnani dual active-set method. Returns `None` on
    /// infeasibility.
    fn dual_active_set(&self) -> Option<OracleResult> {
        let n = self.n();
        let chol = self.q.clone().cholesky()?;
        let mut x = -chol.solve(self.c);
        // Active constraints: (is_eq, index, normal, rhs), multipliers u.
        let mut act: Vec<(bool, usize)> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let bscale = self.scale();
        let tol = 1e-11 * bscale;
        let normal = |is_eq: bool, i: usize, sign: f64| -> (DVector<f64>, f64) {
            if is_eq {
                (&self.eq[i].0 * sign, self.eq[i].1 * sign)
            } else {
                (self.ineq[i].0.clone(), self.ineq[i].1)
            }
        };
        let mut eq_sign = vec![1.0; self.eq.len()];
        let max_steps = 50 * (self.eq.len() + self.ineq.len() + n + 1);
        let mut steps = 0;

        // Equalities first, then the most violated inequality.
        let mut pending_eq: Vec<usize> = (0..self.eq.len()).collect();
        loop {
            let next = if let Some(i) = pending_eq.first().copied() {
                pending_eq.remove(0);
                let (row, b) = &self.eq[i];
                let s = row.dot(&x) - b;
                eq_sign[i] = if s > 0.0 { -1.0 } else { 1.0 };
                Some((true, i))
            } else {
                let mut worst: Option<(usize, f64)> = None;
                for (i, (row, b)) in self.ineq.iter().enumerate() {
                    if act.contains(&(false, i)) {
                        continue;
                    }
                    let s = (row.dot(&x) - b) / row.norm();
                    if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                        worst = Some((i, s));
                    }
                }
                worst.map(|(i, _)| (false, i))
            };
            let Some((is_eq, pi)) = next else { break };
            let (np, bp) = normal(is_eq, pi, if is_eq { eq_sign[pi] } else { 1.0 });
            let mut up = 0.0;
            loop {
                steps += 1;
                if steps > max_steps {
                    return None;
                }
                let sp = np.dot(&x) - bp;
                // Directions from the current active normals.
                let k = act.len();
                let mut nmat = DMatrix::zeros(n, k);
                for (c, &(e, i)) in act.iter().enumerate() {
                    let (row, _) = normal(e, i, if e { eq_sign[i] } else { 1.0 });
                    nmat.set_column(c, &row);
                }
                let qinv_np = chol.solve(&np);
                let (zdir, r) = if k == 0 {
                    (qinv_np.clone(), DVector::zeros(0))
                } else {
                    let qinv_n = chol.solve(&nmat);
                    let s = nmat.transpose() * &qinv_n;
                    let r = s.lu().solve(&(nmat.transpose() * &qinv_np))?;
                    (&qinv_np - &qinv_n * &r, r)
                };
                let zn = zdir.dot(&np);
                let full = zn > 1e-12 * np.dot(&qinv_np);
                let satisfied = if is_eq { sp.abs() <= tol } else { sp >= -tol };
                if satisfied {
                    if is_eq && full {
                        act.push((is_eq, pi));
                        u.push(up);
                    }
                    break;
                }
                // Largest dual step keeping inequality multipliers nonnegative.
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for (c, &(e, _)) in act.iter().enumerate() {
                    if !e && r[c] > 1e-14 {
                        let t = u[c] / r[c];
                        if t < t1 {
                            t1 = t;
                            drop = Some(c);
                        }
                    }
                }
                if !full {
                    if drop.is_none() {
                        return None;
                    }
                    let c = drop.unwrap();
                    for (cc, uc) in u.iter_mut().enumerate() {
                        *uc -= t1 * r[cc];
                    }
                    up += t1;
                    act.remove(c);
                    u.remove(c);
                    continue;
                }
                let t2 = -sp / zn;
                let t = t2.min(t1);
                x.axpy(t, &zdir, 1.0);
                for (cc, uc) in u.iter_mut().enumerate() {
                    *uc -= t * r[cc];
                }
                up += t;
                if t2 <= t1 {
                    act.push((is_eq, pi));
                    u.push(up);
                    break;
                }
                let c = drop.unwrap();
                act.remove(c);
                u.remove(c);
            }
        }

        // Clean up on the final active set.
        let active: Vec<usize> = act.iter().filter(|(e, _)| !e).map(|&(_, i)| i).collect();
        let (x, u_eq, u_act) = self.solve_kkt(&active).unwrap_or_else(|| {
            let mut u_eq = DVector::zeros(self.eq.len());
            let mut u_act = DVector::zeros(active.len());
            let mut ai = 0;
            for (c, &(e, i)) in act.iter().enumerate() {
                if e {
                    u_eq[i] = u[c] * eq_sign[i];
                } else {
                    u_act[ai] = u[c];
                    ai += 1;
                }
            }
            (x.clone(), u_eq, u_act)
        });
        Some(self.finish(x, u_eq, &active, &u_act))
    }
}

fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    for i in (0..k).rev() {
        if comb[i] < n - k + i {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Subset budget under which [`OracleMethod::Auto`] enumerates.
const AUTO_BUDGET: u128 = 50_000;
/// Hard cap for forced enumeration.
const ENUMERATE_CAP: u128 = 20_000_000;

/// Solve the relaxation `spec` of `prob` exactly.
pub fn reference_qp_solve(prob: &MiqpProblem, spec: &RelaxationSpec) -> Result<OracleResult> {
    reference_qp_solve_with(prob, spec, OracleMethod::Auto)
}

pub fn reference_qp_solve_with(
    prob: &MiqpProblem,
    spec: &RelaxationSpec,
    method: OracleMethod,
) -> Result<OracleResult> {
    let qp = DenseQp::from_problem(prob, spec);
    let count = qp.subset_count();
    let res = match method {
        OracleMethod::Enumerate => {
            if count > ENUMERATE_CAP {
                return Err(Error::TooLarge(format!(
                    "{count} candidate active sets exceed {ENUMERATE_CAP}"
                )));
            }
            qp.enumerate()
        }
        OracleMethod::DualActiveSet => qp.dual_active_set(),
        OracleMethod::Auto => {
            let first = if count <= AUTO_BUDGET {
                qp.enumerate()
            } else {
                None
            };
            first.or_else(|| qp.dual_active_set())
        }
    };
    Ok(match res {
        Some(r) if r.kkt_residual <= 1e-8 || method == OracleMethod::Enumerate => r,
        Some(r) => {
            // A loose answer from the dual method: try enumeration when feasible.
            if method == OracleMethod::Auto && count <= ENUMERATE_CAP / 100 {
                qp.enumerate().unwrap_or(r)
            } else {
                r
            }
        }
        None => OracleResult::infeasible(),
    })
}

/// Solve the MIQP by trying every assignment of the binaries.
pub fn enumerate_miqp(prob: &MiqpProblem) -> Result<OracleResult> {
    let p = prob.p();
    if p > MAX_ENUMERATE_P {
        return Err(Error::TooLarge(format!(
            "p = {p} exceeds {MAX_ENUMERATE_P} binaries"
        )));
    }
    let mut best: Option<(OracleResult, Vec<bool>)> = None;
    let mut visited = 0;
    for mask in 0u32..(1u32 << p) {
        visited += 1;
        let upper: Vec<bool> = (0..p).map(|i| mask >> i & 1 == 1).collect();
        let spec = RelaxationSpec::leaf(&upper);
        let r = reference_qp_solve(prob, &spec)?;
        if r.status == OracleStatus::Optimal
            && best.as_ref().is_none_or(|(b, _)| r.cost < b.cost)
        {
            best = Some((r, upper));
        }
    }
    Ok(match best {
        Some((mut r, upper)) => {
            r.fixing = Some(upper);
            r.fixings_visited = visited;
            r
        }
        None => OracleResult {
            fixings_visited: visited,
            ..OracleResult::infeasible()
        },
    })
}
