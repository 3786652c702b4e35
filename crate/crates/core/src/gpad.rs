//! Accelerated dual gradient projection for one QP relaxation.

use nalgebra::DVector;

use crate::dual::{DualData, DualVector};
use crate::problem::RelaxationSpec;

/// What to do when the gradient-based restart condition fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RestartRule {
    /// Never restart.
    None,
    /// Zero the counter driving the momentum coefficient.
    HardReset,
    /// Redo the iteration with the extrapolated point replaced by the
    /// current iterate.
    #[default]
    SoftAssign,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Primal feasibility tolerance.
    pub eps_g: f64,
    /// Optimality (duality gap) tolerance.
    pub eps_v: f64,
    /// Infeasibility detection tolerance.
    pub eps_i: f64,
    pub max_iter: usize,
    /// Iterations between infeasibility / early-stop checks.
    pub infeas_check_period: usize,
    /// Infeasibility is declared once the certificate test has held at every
    /// check while `||eta||_inf` grew by this factor. `1.0` stops at the
    /// first check that passes.
    pub infeas_growth: f64,
    pub restart: RestartRule,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_g: 1e-5,
            eps_v: 1e-5,
            eps_i: 1e-2,
            max_iter: 20_000,
            infeas_check_period: 10,
            infeas_growth: 2.0,
            restart: RestartRule::SoftAssign,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.eps_g > 0.0
            && self.eps_i > 0.0
            && self.eps_v >= 0.0
            && self.max_iter > 0
            && self.infeas_check_period > 0
            && self.infeas_growth >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid tolerances {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GpadMode {
    #[default]
    Standard,
    /// Binary rows are projected onto the nearer bound each iteration.
    BinaryHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpadStatus {
    Optimal,
    Infeasible,
    EarlyStopped,
    MaxIter,
}

/// Normalized dual ray proving infeasibility of a relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct FarkasCertificate {
    pub mu: DVector<f64>,
    pub pi: DVector<f64>,
}

impl FarkasCertificate {
    pub fn as_dual(&self) -> DualVector {
        DualVector {
            lambda: self.mu.clone(),
            nu: self.pi.clone(),
        }
    }

    /// Recheck `mu >= 0`, `||A_s'(mu,pi)||_inf <= eps_i` and
    /// `d'(mu,pi) <= -eps_i` against the dual data.
    pub fn verify(&self, dual: &DualData, eps_i: f64) -> bool {
        let eta = self.as_dual();
        if self.mu.iter().any(|&x| x < 0.0) {
            return false;
        }
        let y = dual.condense(&eta);
        let a = dual.transpose_mul(&y);
        a.amax() <= eps_i && dual.d_dot(&eta, &y) <= -eps_i
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpadResult {
    pub status: GpadStatus,
    /// Primal point of the final iterate (`z_k` at the exit iteration).
    pub z: DVector<f64>,
    /// Dual point: the extrapolated `w_k` on `Optimal`/`MaxIter`, the
    /// iterate `lambda_k` on `EarlyStopped`/`Infeasible`.
    pub dual: DualVector,
    /// Dual objective at `dual`.
    pub cost: f64,
    pub iters: usize,
    pub restarts: usize,
    pub certificate: Option<FarkasCertificate>,
}

/// Per-iteration diagnostics passed to a trace callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterInfo {
    pub iter: usize,
    /// Dual objective at the current projected iterate.
    pub psi: f64,
    /// Largest unscaled primal residual.
    pub max_residual: f64,
    pub restarted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Off,
    NonNeg,
    Free,
}

fn base_kinds(dual: &DualData, spec: &RelaxationSpec) -> Vec<RowKind> {
    let mut kinds: Vec<RowKind> = (0..dual.n_ineq())
        .map(|j| {
            if dual.is_enabled(j) {
                RowKind::NonNeg
            } else {
                RowKind::Off
            }
        })
        .collect();
    for &i in &spec.fixed_upper {
        let (ju, jl) = dual.row_map(i);
        kinds[ju] = RowKind::Free;
        kinds[jl] = RowKind::Off;
    }
    for &i in &spec.fixed_lower {
        let (ju, jl) = dual.row_map(i);
        kinds[jl] = RowKind::Free;
        kinds[ju] = RowKind::Off;
    }
    kinds
}

/// Solve the relaxation described by `spec`.
///
/// `warm` initializes both the current and the previous dual iterate.
/// `incumbent` enables early termination once the dual objective reaches it.
///
/// # Panics
/// If `warm` does not have the stacked dimensions of `dual`.
pub fn gpad_solve(
    dual: &DualData,
    spec: &RelaxationSpec,
    tol: &Tolerances,
    warm: Option<&DualVector>,
    incumbent: Option<f64>,
    mode: GpadMode,
) -> GpadResult {
    gpad_solve_traced(dual, spec, tol, warm, incumbent, mode, None)
}

/// [`gpad_solve`] with an optional per-iteration callback.
pub fn gpad_solve_traced(
    dual: &DualData,
    spec: &RelaxationSpec,
    tol: &Tolerances,
    warm: Option<&DualVector>,
    incumbent: Option<f64>,
    mode: GpadMode,
    mut trace: Option<&mut dyn FnMut(IterInfo)>,
) -> GpadResult {
    let (n, m, p, q) = (dual.n(), dual.m(), dual.p(), dual.q());
    let ni = dual.n_ineq();
    let r = m + p + q;
    let l = dual.lipschitz();
    let inv_l = 1.0 / l;
    let feas = tol.eps_g * inv_l;
    let opt = tol.eps_v * inv_l;
    let heuristic = mode == GpadMode::BinaryHeuristic;

    let mut kinds = base_kinds(dual, spec);

    let mut lam = DVector::zeros(ni);
    let mut nu = DVector::zeros(q);
    if let Some(w0) = warm {
        assert_eq!(w0.lambda.len(), ni, "warm start lambda length");
        assert_eq!(w0.nu.len(), q, "warm start nu length");
        lam.copy_from(&w0.lambda);
        nu.copy_from(&w0.nu);
        for j in 0..ni {
            if kinds[j] == RowKind::Off {
                lam[j] = 0.0;
            }
        }
    }
    let mut lam_prev = lam.clone();
    let mut nu_prev = nu.clone();

    let mut w = DVector::zeros(ni);
    let mut w_eq = DVector::zeros(q);
    let mut y = DVector::zeros(r);
    let mut v = DVector::zeros(r);
    let mut z_tmp = DVector::zeros(n);
    let mut g = DVector::zeros(ni);
    let mut g_eq = DVector::zeros(q);
    let mut lam_new = DVector::zeros(ni);
    let mut nu_new = DVector::zeros(q);

    let mut kb: usize = 0;
    let mut iters = 0;
    let mut restarts = 0;
    let mut plain = false;
    // `||eta||_inf` when the certificate test started passing.
    let mut fired_at: Option<f64> = None;

    loop {
        let beta = if plain || kb < 2 {
            0.0
        } else {
            (kb as f64 - 1.0) / (kb as f64 + 2.0)
        };
        w.copy_from(&lam);
        w_eq.copy_from(&nu);
        if beta != 0.0 {
            w.axpy(beta, &lam, 1.0);
            w.axpy(-beta, &lam_prev, 1.0);
            w_eq.axpy(beta, &nu, 1.0);
            w_eq.axpy(-beta, &nu_prev, 1.0);
        }
        dual.condense_into(&w, &w_eq, &mut y);
        dual.constraint_values_into(&y, &mut v, &mut z_tmp);
        dual.gradient(&v, &mut g, &mut g_eq);
        iters += 1;

        if heuristic {
            for i in 0..p {
                let (ju, jl) = dual.row_map(i);
                if dual.binary_value(&v, i) >= dual.binary_midpoint(i) {
                    kinds[ju] = RowKind::Free;
                    kinds[jl] = RowKind::Off;
                } else {
                    kinds[ju] = RowKind::Off;
                    kinds[jl] = RowKind::Free;
                }
            }
        }

        // Stopping tests on (w_k, s_k), s = g / L.
        let mut feasible = true;
        let mut sign_ok = true;
        let mut gap = 0.0;
        let mut max_res: f64 = 0.0;
        for j in 0..ni {
            let s = g[j] * inv_l;
            match kinds[j] {
                RowKind::Off => {}
                RowKind::NonNeg => {
                    feasible &= s <= feas;
                    sign_ok &= w[j] >= 0.0;
                    gap += w[j] * s;
                    max_res = max_res.max(g[j]);
                }
                RowKind::Free => {
                    feasible &= s.abs() <= feas;
                    gap += w[j] * s;
                    max_res = max_res.max(g[j].abs());
                }
            }
        }
        for k in 0..q {
            let s = g_eq[k] * inv_l;
            feasible &= s.abs() <= feas;
            gap += w_eq[k] * s;
            max_res = max_res.max(g_eq[k].abs());
        }
        let gap_ok = if heuristic {
            gap.abs() <= opt
        } else {
            -gap <= opt && sign_ok
        };

        if let Some(cb) = trace.as_deref_mut() {
            let eta = DualVector {
                lambda: lam.clone(),
                nu: nu.clone(),
            };
            let yk = dual.condense(&eta);
            let a = dual.transpose_mul(&yk);
            cb(IterInfo {
                iter: iters,
                psi: dual.dual_value(&eta, &yk, &a),
                max_residual: max_res,
                restarted: plain,
            });
        }

        if (feasible && gap_ok) || iters >= tol.max_iter {
            let status = if feasible && gap_ok {
                GpadStatus::Optimal
            } else {
                GpadStatus::MaxIter
            };
            let z = dual.primal_from(&y);
            let eta = DualVector {
                lambda: w.clone(),
                nu: w_eq.clone(),
            };
            let a = dual.transpose_mul(&y);
            let cost = dual.dual_value(&eta, &y, &a);
            return GpadResult {
                status,
                z,
                dual: eta,
                cost,
                iters,
                restarts,
                certificate: None,
            };
        }

        // Projection step.
        for j in 0..ni {
            let t = w[j] + g[j] * inv_l;
            lam_new[j] = match kinds[j] {
                RowKind::Off => 0.0,
                RowKind::NonNeg => t.max(0.0),
                RowKind::Free => t,
            };
        }
        for k in 0..q {
            nu_new[k] = w_eq[k] + g_eq[k] * inv_l;
        }

        if !plain && tol.restart != RestartRule::None {
            let mut dir = 0.0;
            for j in 0..ni {
                dir += g[j] * (lam_new[j] - lam[j]);
            }
            for k in 0..q {
                dir += g_eq[k] * (nu_new[k] - nu[k]);
            }
            if -dir > 0.0 {
                restarts += 1;
                match tol.restart {
                    RestartRule::SoftAssign if kb >= 2 => {
                        plain = true;
                        continue;
                    }
                    RestartRule::HardReset => kb = 0,
                    _ => {}
                }
            }
        }
        plain = false;

        std::mem::swap(&mut lam_prev, &mut lam);
        std::mem::swap(&mut lam, &mut lam_new);
        std::mem::swap(&mut nu_prev, &mut nu);
        std::mem::swap(&mut nu, &mut nu_new);
        kb += 1;

        if !heuristic && iters % tol.infeas_check_period == 0 {
            let eta = DualVector {
                lambda: lam.clone(),
                nu: nu.clone(),
            };
            let yk = dual.condense(&eta);
            let a = dual.transpose_mul(&yk);
            let cert = infeasibility_test(dual, &eta, &yk, &a, tol.eps_i);
            let alpha = eta.norm_inf();
            let confirmed = match (&cert, fired_at) {
                (None, _) => {
                    fired_at = None;
                    false
                }
                (Some(_), None) => {
                    fired_at = Some(alpha);
                    tol.infeas_growth <= 1.0
                }
                (Some(_), Some(a0)) => alpha >= tol.infeas_growth * a0,
            };
            if confirmed {
                let z = dual.primal_from(&yk);
                let cost = dual.dual_value(&eta, &yk, &a);
                return GpadResult {
                    status: GpadStatus::Infeasible,
                    z,
                    dual: eta,
                    cost,
                    iters,
                    restarts,
                    certificate: cert,
                };
            }
            if let Some(v0) = incumbent {
                let psi = dual.dual_value(&eta, &yk, &a);
                if psi >= v0 {
                    let z = dual.primal_from(&yk);
                    return GpadResult {
                        status: GpadStatus::EarlyStopped,
                        z,
                        dual: eta,
                        cost: psi,
                        iters,
                        restarts,
                        certificate: None,
                    };
                }
            }
        }
    }
}

fn infeasibility_test(
    dual: &DualData,
    eta: &DualVector,
    y: &DVector<f64>,
    a: &DVector<f64>,
    eps_i: f64,
) -> Option<FarkasCertificate> {
    let alpha = eta.norm_inf();
    if alpha <= 0.0 {
        return None;
    }
    if a.amax() <= eps_i * alpha && dual.d_dot(eta, y) < -eps_i * alpha {
        Some(FarkasCertificate {
            mu: &eta.lambda / alpha,
            pi: &eta.nu / alpha,
        })
    } else {
        None
    }
}

/// Standalone infeasibility test on a dual iterate.
pub fn check_infeasibility(
    dual: &DualData,
    eta: &DualVector,
    tol: &Tolerances,
) -> Option<FarkasCertificate> {
    let y = dual.condense(eta);
    let a = dual.transpose_mul(&y);
    infeasibility_test(dual, eta, &y, &a, tol.eps_i)
}
