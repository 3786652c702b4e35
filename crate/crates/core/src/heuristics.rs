//! Fast suboptimal solutions: the binary-projection heuristic and the
//! mid-way approach that fixes nearly-integral binaries before branching.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::bnb::{
    bnb_solve_with, BnbOptions, GpadRelaxation, MiqpResult, MiqpStatus, Presolved,
    RelaxationSolver, SearchSetup,
};
use crate::dual::DualData;
use crate::error::{Error, Result};
use crate::gpad::{GpadMode, GpadResult, GpadStatus, Tolerances};
use crate::problem::{MiqpProblem, RelaxationSpec};
use crate::warmstart::BinaryWarmStart;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicStatus {
    Feasible,
    NotFound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicResult {
    pub status: HeuristicStatus,
    pub z_h: Option<DVector<f64>>,
    /// `V(z_h)`, or `+inf` when nothing was found.
    pub v_h: f64,
    /// Root relaxation solve.
    pub root: GpadResult,
    /// The root relaxation was infeasible, so the MIQP is too.
    pub root_infeasible: bool,
    /// The root relaxation was already integral and was returned as is.
    pub root_integral: bool,
    /// Iterations of the projection phase.
    pub heuristic_iters: usize,
}

/// Acceptance tolerances for a heuristic point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityTol {
    /// Bound on inequality and equality violations.
    pub constraints: f64,
    /// Distance of each `Abar_i z` from its nearest binary bound.
    pub integrality: f64,
}

impl FeasibilityTol {
    /// Constraints within `10 eps_g`. Binaries within `eps_int`, widened to
    /// `10 eps_g` when the solver tolerance is looser than `eps_int`: GPAD
    /// cannot place a pinned row closer than its own feasibility tolerance.
    pub fn from_tolerances(tol: &Tolerances, eps_int: f64) -> Self {
        Self {
            constraints: 10.0 * tol.eps_g,
            integrality: eps_int.max(10.0 * tol.eps_g),
        }
    }
}

fn accept(prob: &MiqpProblem, z: &DVector<f64>, ft: &FeasibilityTol) -> bool {
    let v = prob.violation(z);
    v.continuous() <= ft.constraints && v.integrality <= ft.integrality
}

/// Projection phase from a solved root: GPAD in binary-heuristic mode,
/// warm-started from the root duals. Returns the point and its cost when
/// it passes the feasibility check.
pub fn heuristic_phase(
    prob: &MiqpProblem,
    solver: &mut dyn RelaxationSolver,
    root: &GpadResult,
    ft: &FeasibilityTol,
) -> (Option<(DVector<f64>, f64)>, usize) {
    let spec = RelaxationSpec::root(prob.p());
    let r = solver.solve(&spec, Some(&root.dual), None, GpadMode::BinaryHeuristic);
    let found = (r.status == GpadStatus::Optimal && accept(prob, &r.z, ft))
        .then(|| (r.z.clone(), prob.objective(&r.z)));
    (found, r.iters)
}

/// Binary-projection heuristic with the GPAD solver.
pub fn heuristic_solve(
    prob: &MiqpProblem,
    dual: &DualData,
    tol: &Tolerances,
    eps_int: f64,
) -> Result<HeuristicResult> {
    tol.validate()?;
    let mut solver = GpadRelaxation::new(dual, *tol);
    Ok(heuristic_solve_with(
        prob,
        &mut solver,
        &FeasibilityTol::from_tolerances(tol, eps_int),
    ))
}

pub fn heuristic_solve_with(
    prob: &MiqpProblem,
    solver: &mut dyn RelaxationSolver,
    ft: &FeasibilityTol,
) -> HeuristicResult {
    let spec = RelaxationSpec::root(prob.p());
    let root = solver.solve(&spec, None, None, GpadMode::Standard);
    let mut out = HeuristicResult {
        status: HeuristicStatus::NotFound,
        z_h: None,
        v_h: f64::INFINITY,
        root_infeasible: root.status == GpadStatus::Infeasible,
        root_integral: false,
        heuristic_iters: 0,
        root,
    };
    if out.root_infeasible {
        return out;
    }
    if out.root.status == GpadStatus::Optimal && accept(prob, &out.root.z, ft) {
        out.root_integral = true;
        out.status = HeuristicStatus::Feasible;
        out.v_h = prob.objective(&out.root.z);
        out.z_h = Some(out.root.z.clone());
        return out;
    }
    let (found, iters) = heuristic_phase(prob, solver, &out.root, ft);
    out.heuristic_iters = iters;
    if let Some((z, v)) = found {
        out.status = HeuristicStatus::Feasible;
        out.z_h = Some(z);
        out.v_h = v;
    }
    out
}

/// Relative thresholds: binary `i` counts as near its lower bound when
/// `Abar_i z <= lbar_i + lower (ubar_i - lbar_i)` and near its upper bound
/// when `Abar_i z >= lbar_i + upper (ubar_i - lbar_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            lower: 0.01,
            upper: 0.99,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lower && self.lower < self.upper && self.upper <= 1.0) {
            return Err(Error::ThresholdOrder {
                lower: self.lower,
                upper: self.upper,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidwayPartition {
    pub fix_lower: BTreeSet<usize>,
    pub fix_upper: BTreeSet<usize>,
    pub branch_set: BTreeSet<usize>,
    pub thresholds: Thresholds,
}

impl MidwayPartition {
    pub fn fixed_spec(&self, p: usize) -> RelaxationSpec {
        RelaxationSpec::new(
            p,
            self.fix_lower.iter().copied(),
            self.fix_upper.iter().copied(),
        )
        .expect("partition sets are disjoint")
    }
}

pub fn midway_partition(
    z_r: &DVector<f64>,
    prob: &MiqpProblem,
    thresholds: Thresholds,
) -> Result<MidwayPartition> {
    thresholds.validate()?;
    let t = prob.binary_values(z_r);
    let d = prob.data();
    let mut part = MidwayPartition {
        fix_lower: BTreeSet::new(),
        fix_upper: BTreeSet::new(),
        branch_set: BTreeSet::new(),
        thresholds,
    };
    for i in 0..prob.p() {
        let (lb, ub) = (d.l_bar[i], d.u_bar[i]);
        let lo = lb + thresholds.lower * (ub - lb);
        let hi = lb + thresholds.upper * (ub - lb);
        if t[i] <= lo {
            part.fix_lower.insert(i);
        } else if t[i] >= hi {
            part.fix_upper.insert(i);
        } else {
            part.branch_set.insert(i);
        }
    }
    Ok(part)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MidwayMode {
    /// Pin the near-integral binaries and branch only on the rest.
    #[default]
    HardFix,
    /// Keep the full tree; explore the heuristic's subtree first.
    Prioritize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MidwayOptions {
    pub thresholds: Thresholds,
    pub mode: MidwayMode,
    pub bnb: BnbOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidwayResult {
    pub result: MiqpResult,
    pub heuristic: HeuristicResult,
    pub partition: Option<MidwayPartition>,
}

pub fn midway_solve(
    prob: &MiqpProblem,
    dual: &DualData,
    tol: &Tolerances,
    opts: &MidwayOptions,
) -> Result<MidwayResult> {
    tol.validate()?;
    let mut solver = GpadRelaxation::new(dual, *tol);
    let ft = FeasibilityTol::from_tolerances(tol, opts.bnb.eps_int);
    midway_solve_with(prob, dual, &mut solver, &ft, opts)
}

fn empty_result(status: MiqpStatus, root: &GpadResult, z: Option<DVector<f64>>, cost: f64) -> MiqpResult {
    MiqpResult {
        status,
        zeta: z,
        cost,
        qp_solved: 1,
        qp_optimal: usize::from(root.status == GpadStatus::Optimal),
        nodes_created: 1,
        nodes_popped: 1,
        nodes_skipped_noqp: 0,
        gpad_iters: root.iters,
        maxiter_nodes: usize::from(root.status == GpadStatus::MaxIter),
        trace: Vec::new(),
    }
}

pub fn midway_solve_with(
    prob: &MiqpProblem,
    dual: &DualData,
    solver: &mut dyn RelaxationSolver,
    ft: &FeasibilityTol,
    opts: &MidwayOptions,
) -> Result<MidwayResult> {
    opts.thresholds.validate()?;
    opts.bnb.validate(prob)?;
    let p = prob.p();
    let heur = heuristic_solve_with(prob, solver, ft);
    if heur.root_infeasible {
        let res = empty_result(MiqpStatus::Infeasible, &heur.root, None, f64::INFINITY);
        return Ok(MidwayResult {
            result: res,
            heuristic: heur,
            partition: None,
        });
    }
    if heur.root_integral {
        let res = empty_result(MiqpStatus::Optimal, &heur.root, heur.z_h.clone(), heur.v_h);
        return Ok(MidwayResult {
            result: res,
            heuristic: heur,
            partition: None,
        });
    }
    let root = &heur.root;
    let part = midway_partition(&root.z, prob, opts.thresholds)?;
    let presolved = Presolved {
        z: root.z.clone(),
        dual: root.dual.clone(),
        cost: root.cost,
    };
    let mut bnb = opts.bnb.clone();
    if let Some(z) = &heur.z_h {
        let better = bnb
            .initial_incumbent
            .as_ref()
            .is_none_or(|(v, _)| heur.v_h < *v);
        if better {
            bnb.initial_incumbent = Some((heur.v_h, z.clone()));
        }
    }
    let setup = match opts.mode {
        MidwayMode::HardFix => SearchSetup {
            root: part.fixed_spec(p),
            presolved: (!part.branch_set.is_empty()).then_some(presolved),
            known_leaf: None,
            priority: None,
        },
        MidwayMode::Prioritize => {
            let (ws, known) = match &heur.z_h {
                Some(z) => {
                    let t = prob.binary_values(z);
                    let upper: Vec<bool> = (0..p).map(|i| t[i] > prob.binary_midpoint(i)).collect();
                    let ws = BinaryWarmStart::new(
                        p,
                        (0..p).filter(|&i| !upper[i]),
                        (0..p).filter(|&i| upper[i]),
                    )?;
                    (ws, Some(RelaxationSpec::leaf(&upper)))
                }
                None => (
                    BinaryWarmStart::new(
                        p,
                        part.fix_lower.iter().copied(),
                        part.fix_upper.iter().copied(),
                    )?,
                    None,
                ),
            };
            bnb.warm_start = Some(ws);
            let priority: BTreeSet<usize> =
                part.fix_lower.union(&part.fix_upper).copied().collect();
            SearchSetup {
                root: RelaxationSpec::root(p),
                presolved: Some(presolved),
                known_leaf: known,
                priority: Some(priority),
            }
        }
    };
    let mut result = bnb_solve_with(prob, dual, solver, &bnb, setup);
    result.qp_solved += 1;
    result.gpad_iters += root.iters + heur.heuristic_iters;
    Ok(MidwayResult {
        result,
        heuristic: heur,
        partition: Some(part),
    })
}
