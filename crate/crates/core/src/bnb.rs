//! Depth-first branch and bound over QP relaxations.

use std::collections::BTreeSet;
use std::rc::Rc;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::dual::{DualData, DualVector};
use crate::error::{Error, Result};
use crate::gpad::{gpad_solve, GpadMode, GpadResult, GpadStatus, Tolerances};
use crate::problem::{MiqpProblem, RelaxationSpec};
use crate::warmstart::{
    most_fractional, prioritized, sos1_branch, warmstart_branch, warmstart_branch_maxfrac,
    BinaryWarmStart, BranchDecision, NoQpKind, Sos1Structure,
};

/// Anything that can solve a QP relaxation. The GPAD solver is the normal
/// implementation; tests substitute scripted ones.
pub trait RelaxationSolver {
    fn solve(
        &mut self,
        spec: &RelaxationSpec,
        warm: Option<&DualVector>,
        incumbent: Option<f64>,
        mode: GpadMode,
    ) -> GpadResult;
}

pub struct GpadRelaxation<'a> {
    pub dual: &'a DualData,
    pub tol: Tolerances,
}

impl<'a> GpadRelaxation<'a> {
    pub fn new(dual: &'a DualData, tol: Tolerances) -> Self {
        Self { dual, tol }
    }
}

impl RelaxationSolver for GpadRelaxation<'_> {
    fn solve(
        &mut self,
        spec: &RelaxationSpec,
        warm: Option<&DualVector>,
        incumbent: Option<f64>,
        mode: GpadMode,
    ) -> GpadResult {
        gpad_solve(self.dual, spec, &self.tol, warm, incumbent, mode)
    }
}

/// How the branching index is picked while warm-started binaries are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WarmStartRule {
    /// Smallest free warm-started index.
    #[default]
    SmallestIndex,
    /// Most fractional free index, with the relaxed noQP test.
    MaxFractional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbOptions {
    /// Tolerance of the test `Abar_i z in {lbar_i, ubar_i}`.
    pub eps_int: f64,
    pub warm_start: Option<BinaryWarmStart>,
    pub warm_rule: WarmStartRule,
    pub sos1: Option<Sos1Structure>,
    /// Known integer-feasible point and its cost.
    pub initial_incumbent: Option<(f64, DVector<f64>)>,
    /// Stop relaxations early once their dual bound reaches the incumbent.
    pub early_stop: bool,
    /// Discard solved nodes whose bound exceeds the incumbent.
    pub prune_by_bound: bool,
    /// Cap on popped nodes.
    pub max_nodes: Option<usize>,
    pub time_limit: Option<Duration>,
    pub record_trace: bool,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            eps_int: 1e-4,
            warm_start: None,
            warm_rule: WarmStartRule::SmallestIndex,
            sos1: None,
            initial_incumbent: None,
            early_stop: true,
            prune_by_bound: true,
            max_nodes: None,
            time_limit: None,
            record_trace: true,
        }
    }
}

impl BnbOptions {
    pub fn validate(&self, prob: &MiqpProblem) -> Result<()> {
        let p = prob.p();
        if !(self.eps_int > 0.0) {
            return Err(Error::Config("eps_int must be positive".into()));
        }
        if let Some(ws) = &self.warm_start {
            BinaryWarmStart::new(p, ws.lower.iter().copied(), ws.upper.iter().copied())?;
        }
        if let Some(sos) = &self.sos1 {
            Sos1Structure::new(p, sos.groups().to_vec())?;
        }
        if let Some((_, z)) = &self.initial_incumbent {
            if z.len() != prob.n() {
                return Err(Error::DimensionMismatch {
                    field: "initial_incumbent".into(),
                    expected: prob.n().to_string(),
                    found: z.len().to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiqpStatus {
    Optimal,
    Infeasible,
    /// A limit was hit or a relaxation did not converge; best point returned.
    Suboptimal,
    /// A limit was hit before any integer-feasible point was found.
    NoSolution,
}

/// What happened to a popped node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    /// Relaxation solved and the node branched (or, with bound pruning
    /// disabled, an integral point not better than the incumbent).
    Solved,
    Incumbent,
    PrunedBound,
    EarlyStopped,
    Infeasible,
    SkippedNoQp,
    /// Leaf whose point is already the incumbent.
    SkippedKnown,
    MaxIter,
    /// Root relaxation supplied by the caller.
    Presolved,
}

impl NodeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeStatus::Solved => "solved",
            NodeStatus::Incumbent => "incumbent",
            NodeStatus::PrunedBound => "pruned_bound",
            NodeStatus::EarlyStopped => "early_stopped",
            NodeStatus::Infeasible => "infeasible",
            NodeStatus::SkippedNoQp => "skipped_noqp",
            NodeStatus::SkippedKnown => "skipped_known",
            NodeStatus::MaxIter => "maxiter",
            NodeStatus::Presolved => "presolved",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "solved" => NodeStatus::Solved,
            "incumbent" => NodeStatus::Incumbent,
            "pruned_bound" => NodeStatus::PrunedBound,
            "early_stopped" => NodeStatus::EarlyStopped,
            "infeasible" => NodeStatus::Infeasible,
            "skipped_noqp" => NodeStatus::SkippedNoQp,
            "skipped_known" => NodeStatus::SkippedKnown,
            "maxiter" => NodeStatus::MaxIter,
            "presolved" => NodeStatus::Presolved,
            _ => return None,
        })
    }

    /// Whether the node invoked the relaxation solver.
    pub fn ran_solver(&self) -> bool {
        !matches!(
            self,
            NodeStatus::SkippedNoQp | NodeStatus::SkippedKnown | NodeStatus::Presolved
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub node_id: usize,
    pub parent_id: Option<usize>,
    pub fixed_lower: Vec<usize>,
    pub fixed_upper: Vec<usize>,
    /// `0/1/*` rendering of the node's fixings.
    pub pattern: String,
    pub status: NodeStatus,
    /// Relaxation cost; `NaN` when no relaxation was solved.
    pub cost: f64,
    pub gpad_iters: usize,
    pub wall_ns: u64,
    /// Position among the relaxations solved to optimality (1-based).
    pub qp_number: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqpResult {
    pub status: MiqpStatus,
    /// Best integer-feasible point.
    pub zeta: Option<DVector<f64>>,
    /// Incumbent cost; `+inf` without an incumbent.
    pub cost: f64,
    /// Relaxation solver invocations.
    pub qp_solved: usize,
    /// Invocations that returned `Optimal`.
    pub qp_optimal: usize,
    pub nodes_created: usize,
    pub nodes_popped: usize,
    /// Nodes popped without a solver call.
    pub nodes_skipped_noqp: usize,
    pub gpad_iters: usize,
    pub maxiter_nodes: usize,
    pub trace: Vec<TraceRecord>,
}

/// Root relaxation solved before the search starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Presolved {
    pub z: DVector<f64>,
    pub dual: DualVector,
    pub cost: f64,
}

/// Shape of the search: the root node, an optional presolved root, a leaf to
/// skip because its point is known, and indices to branch on first.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSetup {
    pub root: RelaxationSpec,
    pub presolved: Option<Presolved>,
    pub known_leaf: Option<RelaxationSpec>,
    /// Free indices in this set are branched before any other (smallest
    /// first); the remaining warm-started ones follow by fractionality.
    pub priority: Option<BTreeSet<usize>>,
}

impl SearchSetup {
    pub fn root(p: usize) -> Self {
        Self {
            root: RelaxationSpec::root(p),
            presolved: None,
            known_leaf: None,
            priority: None,
        }
    }
}

/// Branching index of the most-fractional rule.
///
/// `t` holds `Abar_i z` for the indices in `free`. Errors with
/// [`Error::AllIntegral`] when every value sits on a bound within `eps_int`.
pub fn select_branch(
    free: &[usize],
    t: &DVector<f64>,
    l_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
    eps_int: f64,
) -> Result<usize> {
    let frac = free.iter().copied().filter(|&i| {
        (t[i] - l_bar[i]).abs() > eps_int && (t[i] - u_bar[i]).abs() > eps_int
    });
    most_fractional(frac, t, l_bar, u_bar).ok_or(Error::AllIntegral)
}

/// Dual warm starts for the two children obtained by fixing binary `j`.
///
/// The entry of the newly pinned row is set so that the primal point of the
/// warm start satisfies that row with equality. When `j` is within
/// `eps_int` of a bound at the parent the parent duals are copied unchanged.
pub fn child_warm_start(
    dual: &DualData,
    prob: &MiqpProblem,
    z: &DVector<f64>,
    lambda: &DualVector,
    j: usize,
    eps_int: f64,
) -> (DualVector, DualVector) {
    let d = prob.data();
    let t = d.a_bar.row(j).transpose().dot(z);
    let (lb, ub) = (d.l_bar[j], d.u_bar[j]);
    let mut w0 = lambda.clone();
    let mut w1 = lambda.clone();
    if t > lb + eps_int && t < ub - eps_int {
        let (ju, jl) = dual.row_map(j);
        let theta = dual.theta_binary(j);
        let h = dual.h_diag_binary(j);
        w0.lambda[jl] = theta * (lb - t) / h;
        w1.lambda[ju] = theta * (t - ub) / h;
    }
    (w0, w1)
}

struct Anchor {
    z: DVector<f64>,
    dual: DualVector,
    t: DVector<f64>,
}

struct Node {
    id: usize,
    parent: Option<usize>,
    spec: RelaxationSpec,
    warm: Option<DualVector>,
    anchor: Option<Rc<Anchor>>,
    mark: Option<NoQpKind>,
}

/// Branch and bound with the GPAD relaxation solver.
pub fn bnb_solve(
    prob: &MiqpProblem,
    dual: &DualData,
    tol: &Tolerances,
    opts: &BnbOptions,
) -> Result<MiqpResult> {
    tol.validate()?;
    opts.validate(prob)?;
    let mut solver = GpadRelaxation::new(dual, *tol);
    Ok(bnb_solve_with(
        prob,
        dual,
        &mut solver,
        opts,
        SearchSetup::root(prob.p()),
    ))
}

/// Branch and bound with any relaxation solver and search setup.
pub fn bnb_solve_with(
    prob: &MiqpProblem,
    dual: &DualData,
    solver: &mut dyn RelaxationSolver,
    opts: &BnbOptions,
    setup: SearchSetup,
) -> MiqpResult {
    Search {
        prob,
        dual,
        opts,
        setup: &setup,
        stack: Vec::new(),
        next_id: 0,
        v0: f64::INFINITY,
        zeta: None,
        res: MiqpResult {
            status: MiqpStatus::Infeasible,
            zeta: None,
            cost: f64::INFINITY,
            qp_solved: 0,
            qp_optimal: 0,
            nodes_created: 0,
            nodes_popped: 0,
            nodes_skipped_noqp: 0,
            gpad_iters: 0,
            maxiter_nodes: 0,
            trace: Vec::new(),
        },
        unsound: false,
    }
    .run(solver)
}

struct Search<'a> {
    prob: &'a MiqpProblem,
    dual: &'a DualData,
    opts: &'a BnbOptions,
    setup: &'a SearchSetup,
    stack: Vec<Node>,
    next_id: usize,
    v0: f64,
    zeta: Option<DVector<f64>>,
    res: MiqpResult,
    unsound: bool,
}

impl Search<'_> {
    fn new_id(&mut self) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        self.res.nodes_created += 1;
        id
    }

    fn record(&mut self, node: &Node, status: NodeStatus, cost: f64, iters: usize, start: Instant) {
        if status.ran_solver() {
            self.res.qp_solved += 1;
        } else if status != NodeStatus::Presolved {
            self.res.nodes_skipped_noqp += 1;
        }
        let qp_number = if matches!(
            status,
            NodeStatus::Solved | NodeStatus::Incumbent | NodeStatus::PrunedBound
        ) {
            self.res.qp_optimal += 1;
            Some(self.res.qp_optimal)
        } else {
            None
        };
        self.res.gpad_iters += iters;
        if self.opts.record_trace {
            self.res.trace.push(TraceRecord {
                node_id: node.id,
                parent_id: node.parent,
                fixed_lower: node.spec.fixed_lower.iter().copied().collect(),
                fixed_upper: node.spec.fixed_upper.iter().copied().collect(),
                pattern: node.spec.pattern(),
                status,
                cost,
                gpad_iters: iters,
                wall_ns: start.elapsed().as_nanos() as u64,
                qp_number,
            });
        }
    }

    fn binary_values(&self, z: &DVector<f64>) -> DVector<f64> {
        self.prob.binary_values(z)
    }

    fn integral(&self, spec: &RelaxationSpec, t: &DVector<f64>) -> bool {
        spec.free()
            .into_iter()
            .all(|i| self.prob.is_integral(i, t[i], self.opts.eps_int))
    }

    fn decide(&self, spec: &RelaxationSpec, t: &DVector<f64>) -> Option<BranchDecision> {
        let d = self.prob.data();
        let (lb, ub) = (&d.l_bar, &d.u_bar);
        let free = spec.free();
        if free.is_empty() {
            return None;
        }
        if let (Some(pri), Some(ws)) = (&self.setup.priority, &self.opts.warm_start) {
            let j = free.iter().copied().find(|i| pri.contains(i)).or_else(|| {
                most_fractional(free.iter().copied().filter(|&i| ws.contains(i)), t, lb, ub)
            });
            if let Some(j) = j {
                return Some(prioritized(spec, ws, j));
            }
        } else if let Some(ws) = &self.opts.warm_start {
            let dec = match self.opts.warm_rule {
                WarmStartRule::SmallestIndex => warmstart_branch(spec, ws),
                WarmStartRule::MaxFractional => warmstart_branch_maxfrac(spec, t, lb, ub, ws),
            };
            if dec.is_some() {
                return dec;
            }
        }
        if let Some(sos) = &self.opts.sos1 {
            return sos1_branch(spec, t, lb, ub, sos);
        }
        let j = select_branch(&free, t, lb, ub, self.opts.eps_int)
            .ok()
            .or_else(|| most_fractional(free.iter().copied(), t, lb, ub))?;
        Some(BranchDecision::standard(j, t, lb, ub))
    }

    /// Push the children of `node`. `solved` tells whether `anchor` is the
    /// node's own relaxation (so the pinned-row warm start applies).
    fn branch(&mut self, node: &Node, anchor: Rc<Anchor>, solved: bool) {
        let Some(dec) = self.decide(&node.spec, &anchor.t) else {
            return;
        };
        let j = dec.j;
        let (w0, w1) = if solved {
            child_warm_start(self.dual, self.prob, &anchor.z, &anchor.dual, j, self.opts.eps_int)
        } else {
            (anchor.dual.clone(), anchor.dual.clone())
        };
        let mk = |s: &mut Self, spec: RelaxationSpec, warm: DualVector, mark: Option<NoQpKind>| {
            let warm = if mark.is_some() {
                anchor.dual.clone()
            } else {
                warm
            };
            Node {
                id: s.new_id(),
                parent: Some(node.id),
                spec,
                warm: Some(warm),
                anchor: Some(anchor.clone()),
                mark,
            }
        };
        let lower = node.spec.with_lower(j);
        let upper = node.spec.with_upper(j);
        if dec.lower_first {
            let c1 = mk(self, upper, w1, dec.mark_upper);
            let c0 = mk(self, lower, w0, dec.mark_lower);
            self.stack.push(c1);
            self.stack.push(c0);
        } else {
            let c0 = mk(self, lower, w0, dec.mark_lower);
            let c1 = mk(self, upper, w1, dec.mark_upper);
            self.stack.push(c0);
            self.stack.push(c1);
        }
    }

    fn limit_hit(&self, start: Instant) -> bool {
        self.opts
            .max_nodes
            .is_some_and(|cap| self.res.nodes_popped >= cap)
            || self.opts.time_limit.is_some_and(|lim| start.elapsed() >= lim)
    }

    fn run(mut self, solver: &mut dyn RelaxationSolver) -> MiqpResult {
        let start = Instant::now();
        if let Some((v, z)) = &self.opts.initial_incumbent {
            self.v0 = *v;
            self.zeta = Some(z.clone());
        }
        let root = Node {
            id: self.new_id(),
            parent: None,
            spec: self.setup.root.clone(),
            warm: None,
            anchor: None,
            mark: None,
        };
        if let Some(pre) = &self.setup.presolved {
            let t0 = Instant::now();
            let t = self.binary_values(&pre.z);
            let anchor = Rc::new(Anchor {
                z: pre.z.clone(),
                dual: pre.dual.clone(),
                t,
            });
            self.record(&root, NodeStatus::Presolved, pre.cost, 0, t0);
            self.branch(&root, anchor, true);
        } else {
            self.stack.push(root);
        }

        let mut limited = false;
        while let Some(node) = self.stack.pop() {
            if self.limit_hit(start) {
                limited = true;
                break;
            }
            self.res.nodes_popped += 1;
            let t0 = Instant::now();
            if self.setup.known_leaf.as_ref() == Some(&node.spec) {
                self.record(&node, NodeStatus::SkippedKnown, f64::NAN, 0, t0);
                continue;
            }
            match node.mark {
                Some(NoQpKind::Sos1) => {
                    let discard = node.spec.is_leaf()
                        || self.opts.sos1.as_ref().is_some_and(|s| s.violated(&node.spec));
                    self.record(&node, NodeStatus::SkippedNoQp, f64::NAN, 0, t0);
                    if !discard {
                        let anchor = node.anchor.clone().expect("marked node has an anchor");
                        self.branch(&node, anchor, false);
                    }
                    continue;
                }
                Some(NoQpKind::WarmStart) if !node.spec.is_leaf() => {
                    self.record(&node, NodeStatus::SkippedNoQp, f64::NAN, 0, t0);
                    let anchor = node.anchor.clone().expect("marked node has an anchor");
                    self.branch(&node, anchor, false);
                    continue;
                }
                _ => {}
            }

            let incumbent = (self.opts.early_stop && self.v0.is_finite()).then_some(self.v0);
            let r = solver.solve(&node.spec, node.warm.as_ref(), incumbent, GpadMode::Standard);
            match r.status {
                GpadStatus::Infeasible => {
                    self.record(&node, NodeStatus::Infeasible, r.cost, r.iters, t0);
                }
                GpadStatus::EarlyStopped => {
                    self.record(&node, NodeStatus::EarlyStopped, r.cost, r.iters, t0);
                }
                GpadStatus::MaxIter => {
                    self.res.maxiter_nodes += 1;
                    self.record(&node, NodeStatus::MaxIter, r.cost, r.iters, t0);
                    if node.spec.is_leaf() {
                        self.unsound = true;
                    } else {
                        let t = self.binary_values(&r.z);
                        let anchor = Rc::new(Anchor {
                            z: r.z,
                            dual: r.dual,
                            t,
                        });
                        self.branch(&node, anchor, true);
                    }
                }
                GpadStatus::Optimal => {
                    let t = self.binary_values(&r.z);
                    if self.opts.prune_by_bound && r.cost > self.v0 {
                        self.record(&node, NodeStatus::PrunedBound, r.cost, r.iters, t0);
                    } else if self.integral(&node.spec, &t) {
                        if r.cost <= self.v0 {
                            self.v0 = r.cost;
                            self.zeta = Some(r.z.clone());
                            self.record(&node, NodeStatus::Incumbent, r.cost, r.iters, t0);
                        } else {
                            self.record(&node, NodeStatus::Solved, r.cost, r.iters, t0);
                        }
                    } else {
                        self.record(&node, NodeStatus::Solved, r.cost, r.iters, t0);
                        let anchor = Rc::new(Anchor {
                            z: r.z,
                            dual: r.dual,
                            t,
                        });
                        self.branch(&node, anchor, true);
                    }
                }
            }
        }

        let mut res = self.res;
        res.cost = self.v0;
        res.status = match (&self.zeta, limited || self.unsound) {
            (Some(_), false) => MiqpStatus::Optimal,
            (None, false) => MiqpStatus::Infeasible,
            (Some(_), true) => MiqpStatus::Suboptimal,
            (None, true) => MiqpStatus::NoSolution,
        };
        res.zeta = self.zeta;
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ProblemData;
    use nalgebra::{dmatrix, dvector, DMatrix};

    fn unit(p: usize) -> (DVector<f64>, DVector<f64>) {
        (DVector::zeros(p), DVector::from_element(p, 1.0))
    }

    #[test]
    fn select_branch_examples() {
        let (lb, ub) = unit(3);
        assert_eq!(select_branch(&[0, 1, 2], &dvector![0.5, 0.9, 0.1], &lb, &ub, 1e-4), Ok(0));
        assert_eq!(select_branch(&[0, 1], &dvector![0.3, 0.7, 0.0], &lb, &ub, 1e-4), Ok(0));
        assert_eq!(select_branch(&[0, 1], &dvector![0.1, 0.25, 0.0], &lb, &ub, 1e-4), Ok(1));
        assert_eq!(
            select_branch(&[0, 1], &dvector![0.0, 1.0, 0.5], &lb, &ub, 1e-4),
            Err(Error::AllIntegral)
        );
    }

    #[test]
    fn one_binary() {
        let prob = ProblemData::new(dmatrix![2.0], dvector![-3.0])
            .with_unit_binaries(1)
            .build()
            .unwrap();
        let dual = DualData::new(&prob).unwrap();
        let res = bnb_solve(&prob, &dual, &Tolerances::default(), &BnbOptions::default()).unwrap();
        assert_eq!(res.status, MiqpStatus::Optimal);
        assert!((res.zeta.unwrap()[0] - 1.0).abs() < 1e-4);
        assert!((res.cost + 2.0).abs() < 1e-4);
    }

    #[test]
    fn child_warm_start_pins_row() {
        let prob = ProblemData::new(dmatrix![2.0, 0.5; 0.5, 1.0], dvector![-1.0, 0.3])
            .with_inequalities(dmatrix![1.0, 1.0], dvector![-5.0], dvector![5.0])
            .with_unit_binaries(2)
            .build()
            .unwrap();
        let dual = DualData::new(&prob).unwrap();
        let r = gpad_solve(
            &dual,
            &RelaxationSpec::root(2),
            &Tolerances::default(),
            None,
            None,
            GpadMode::Standard,
        );
        let t = prob.binary_values(&r.z);
        let j = (0..2).find(|&i| t[i] > 0.01 && t[i] < 0.99).unwrap();
        let (w0, w1) = child_warm_start(&dual, &prob, &r.z, &r.dual, j, 1e-4);
        let z0 = dual.primal_from(&dual.condense(&w0));
        let z1 = dual.primal_from(&dual.condense(&w1));
        assert!((prob.binary_values(&z0)[j] - 0.0).abs() < 1e-9);
        assert!((prob.binary_values(&z1)[j] - 1.0).abs() < 1e-9);
        for k in 0..w0.lambda.len() {
            if k != dual.row_map(j).1 {
                assert_eq!(w0.lambda[k], r.dual.lambda[k]);
            }
        }
    }

    #[test]
    fn infeasible_miqp() {
        // z1 + z2 must lie in [2.5, 3] while both binaries are at most 1.
        let prob = ProblemData::new(DMatrix::identity(2, 2), dvector![0.0, 0.0])
            .with_inequalities(dmatrix![1.0, 1.0], dvector![2.5], dvector![3.0])
            .with_unit_binaries(2)
            .build()
            .unwrap();
        let dual = DualData::new(&prob).unwrap();
        let res = bnb_solve(&prob, &dual, &Tolerances::default(), &BnbOptions::default()).unwrap();
        assert_eq!(res.status, MiqpStatus::Infeasible);
        assert!(res.zeta.is_none());
    }
}
