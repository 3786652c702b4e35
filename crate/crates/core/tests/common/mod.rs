#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use miqp::bnb::{
    bnb_solve_with, BnbOptions, MiqpResult, RelaxationSolver, SearchSetup, TraceRecord,
    WarmStartRule,
};
use miqp::dual::{DualData, DualVector};
use miqp::gpad::{GpadMode, GpadResult, GpadStatus};
use miqp::heuristics::{midway_solve_with, FeasibilityTol, MidwayMode, MidwayOptions, MidwayResult};
use miqp::problem::{MiqpProblem, ProblemData, RelaxationSpec};
use miqp::problems::{gen_random_miqp, RandomMiqpConfig};
use miqp::warmstart::{BinaryWarmStart, Sos1Structure};

/// `min 0.5 |z|^2` with `z` made of `p` unit binaries, so `t = z`.
pub fn unit_problem(p: usize) -> MiqpProblem {
    ProblemData::new(DMatrix::identity(p, p), DVector::zeros(p))
        .with_unit_binaries(p)
        .build()
        .unwrap()
}

#[derive(Clone)]
struct Reply {
    status: GpadStatus,
    t: Vec<f64>,
    cost: f64,
}

/// Relaxation solver answering from a table keyed by node pattern and mode.
/// Asking for anything not in the table panics.
pub struct ScriptedSolver {
    n_ineq: usize,
    q: usize,
    table: HashMap<(String, GpadMode), Reply>,
    pub calls: Vec<(String, GpadMode)>,
}

impl ScriptedSolver {
    pub fn new(dual: &DualData) -> Self {
        Self {
            n_ineq: dual.n_ineq(),
            q: dual.q(),
            table: HashMap::new(),
            calls: Vec::new(),
        }
    }

    pub fn on(self, pattern: &str, status: GpadStatus, t: &[f64], cost: f64) -> Self {
        self.on_mode(pattern, GpadMode::Standard, status, t, cost)
    }

    pub fn on_mode(
        mut self,
        pattern: &str,
        mode: GpadMode,
        status: GpadStatus,
        t: &[f64],
        cost: f64,
    ) -> Self {
        let reply = Reply {
            status,
            t: t.to_vec(),
            cost,
        };
        self.table.insert((pattern.to_string(), mode), reply);
        self
    }
}

impl RelaxationSolver for ScriptedSolver {
    fn solve(
        &mut self,
        spec: &RelaxationSpec,
        _warm: Option<&DualVector>,
        _incumbent: Option<f64>,
        mode: GpadMode,
    ) -> GpadResult {
        let key = (spec.pattern(), mode);
        self.calls.push(key.clone());
        let r = self
            .table
            .get(&key)
            .unwrap_or_else(|| panic!("unscripted relaxation {:?} in mode {:?}", key.0, mode))
            .clone();
        let mut z = DVector::from_vec(r.t);
        for &i in &spec.fixed_lower {
            z[i] = 0.0;
        }
        for &i in &spec.fixed_upper {
            z[i] = 1.0;
        }
        GpadResult {
            status: r.status,
            z,
            dual: DualVector::zeros(self.n_ineq, self.q),
            cost: r.cost,
            iters: 1,
            restarts: 0,
            certificate: None,
        }
    }
}

/// One token per popped node: `pattern#k` for the k-th solved relaxation,
/// otherwise `pattern:status`.
pub fn render(trace: &[TraceRecord]) -> Vec<String> {
    trace
        .iter()
        .map(|r| match r.qp_number {
            Some(k) => format!("{}#{}", r.pattern, k),
            None => format!("{}:{}", r.pattern, r.status.as_str()),
        })
        .collect()
}

use GpadStatus::{EarlyStopped, Infeasible, Optimal};

/// Warm start (1, 0, *), smallest-index rule.
pub fn warm_start_tree() -> (MiqpResult, Vec<String>) {
    let prob = unit_problem(3);
    let dual = DualData::new(&prob).unwrap();
    let mut solver = ScriptedSolver::new(&dual)
        .on("***", Optimal, &[0.6, 0.4, 0.3], 1.0)
        .on("100", Optimal, &[1.0, 0.0, 0.0], 5.0)
        .on("101", Optimal, &[1.0, 0.0, 1.0], 6.0)
        .on("11*", Optimal, &[1.0, 1.0, 0.4], 4.5)
        .on("110", Optimal, &[1.0, 1.0, 0.0], 7.0)
        .on("111", Optimal, &[1.0, 1.0, 1.0], 8.0)
        .on("0**", Optimal, &[0.0, 0.5, 0.5], 9.0);
    let opts = BnbOptions {
        warm_start: Some(BinaryWarmStart::new(3, [1], [0]).unwrap()),
        early_stop: false,
        ..BnbOptions::default()
    };
    let res = bnb_solve_with(&prob, &dual, &mut solver, &opts, SearchSetup::root(3));
    let seq = render(&res.trace);
    (res, seq)
}

pub const WARM_START_ORDER: &[&str] = &[
    "***#1",
    "1**:skipped_noqp",
    "10*:skipped_noqp",
    "100#2",
    "101#3",
    "11*#4",
    "110#5",
    "111#6",
    "0**#7",
];

/// Warm start (0, 0, *), most-fractional rule.
pub fn max_fractional_tree() -> (MiqpResult, Vec<String>) {
    let prob = unit_problem(3);
    let dual = DualData::new(&prob).unwrap();
    let mut solver = ScriptedSolver::new(&dual)
        .on("***", Optimal, &[0.1, 0.3, 0.45], 1.0)
        .on("000", Optimal, &[0.0, 0.0, 0.0], 5.0)
        .on("100", Optimal, &[1.0, 0.0, 0.0], 6.0)
        .on("*10", Optimal, &[0.4, 1.0, 0.0], 4.5)
        .on("010", Optimal, &[0.0, 1.0, 0.0], 7.0)
        .on("110", Optimal, &[1.0, 1.0, 0.0], 8.0)
        .on("001", Optimal, &[0.0, 0.0, 1.0], 5.5)
        .on("101", EarlyStopped, &[1.0, 0.0, 1.0], 5.2)
        .on("*11", EarlyStopped, &[0.5, 1.0, 1.0], 5.1);
    let opts = BnbOptions {
        warm_start: Some(BinaryWarmStart::new(3, [0, 1], []).unwrap()),
        warm_rule: WarmStartRule::MaxFractional,
        ..BnbOptions::default()
    };
    let res = bnb_solve_with(&prob, &dual, &mut solver, &opts, SearchSetup::root(3));
    let seq = render(&res.trace);
    (res, seq)
}

pub const MAX_FRACTIONAL_ORDER: &[&str] = &[
    "***#1",
    "**0:skipped_noqp",
    "*00:skipped_noqp",
    "000#2",
    "100#3",
    "*10#4",
    "010#5",
    "110#6",
    "**1:skipped_noqp",
    "*01:skipped_noqp",
    "001#7",
    "101:early_stopped",
    "*11:early_stopped",
];

/// SOS1 groups {1,2} and {3,4}, warm start (0, 1, *, *).
pub fn sos1_tree() -> (MiqpResult, Vec<String>) {
    let prob = unit_problem(4);
    let dual = DualData::new(&prob).unwrap();
    let mut solver = ScriptedSolver::new(&dual)
        .on("****", Optimal, &[0.3, 0.6, 0.45, 0.4], 1.0)
        .on("0101", Optimal, &[0.0, 1.0, 0.0, 1.0], 5.0)
        .on("0110", Optimal, &[0.0, 1.0, 1.0, 0.0], 6.0)
        .on("00**", Infeasible, &[0.0, 0.0, 0.5, 0.5], f64::INFINITY)
        .on("1***", Optimal, &[1.0, 0.0, 0.5, 0.5], 9.0);
    let opts = BnbOptions {
        warm_start: Some(BinaryWarmStart::new(4, [0], [1]).unwrap()),
        sos1: Some(Sos1Structure::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap()),
        early_stop: false,
        ..BnbOptions::default()
    };
    let res = bnb_solve_with(&prob, &dual, &mut solver, &opts, SearchSetup::root(4));
    let seq = render(&res.trace);
    (res, seq)
}

pub const SOS1_ORDER: &[&str] = &[
    "****#1",
    "0***:skipped_noqp",
    "01**:skipped_noqp",
    "010*:skipped_noqp",
    "0100:skipped_noqp",
    "0101#2",
    "011*:skipped_noqp",
    "0110#3",
    "0111:skipped_noqp",
    "00**:infeasible",
    "1***#4",
];

/// Mid-way branching in prioritize mode: the heuristic returns (0, 0, 1)
/// and only the third binary is near a bound at the root.
pub fn prioritized_tree() -> (MidwayResult, Vec<String>) {
    let prob = unit_problem(3);
    let dual = DualData::new(&prob).unwrap();
    let mut solver = ScriptedSolver::new(&dual)
        .on("***", Optimal, &[0.3, 0.45, 0.995], 0.4)
        .on_mode("***", GpadMode::BinaryHeuristic, Optimal, &[0.0, 0.0, 1.0], 0.5)
        .on("101", Optimal, &[1.0, 0.0, 1.0], 1.0)
        .on("*11", Optimal, &[0.3, 1.0, 1.0], 0.45)
        .on("011", Optimal, &[0.0, 1.0, 1.0], 1.0)
        .on("111", Optimal, &[1.0, 1.0, 1.0], 1.5)
        .on("**0", Optimal, &[0.2, 0.4, 0.0], 0.6);
    let opts = MidwayOptions {
        mode: MidwayMode::Prioritize,
        bnb: BnbOptions {
            early_stop: false,
            ..BnbOptions::default()
        },
        ..MidwayOptions::default()
    };
    let ft = FeasibilityTol {
        constraints: 1e-9,
        integrality: 1e-9,
    };
    let res = midway_solve_with(&prob, &dual, &mut solver, &ft, &opts).unwrap();
    let seq = render(&res.result.trace);
    (res, seq)
}

pub const PRIORITIZED_ORDER: &[&str] = &[
    "***:presolved",
    "**1:skipped_noqp",
    "*01:skipped_noqp",
    "001:skipped_known",
    "101#1",
    "*11#2",
    "011#3",
    "111#4",
    "**0#5",
];

/// The seeded random suite: sizes cycle within n <= 12, m <= 10, q <= 3, p <= 8.
pub fn suite_config(k: u64) -> RandomMiqpConfig {
    let p = 2 + (k % 7) as usize;
    let n = (p + 2 + (k % 3) as usize).min(12);
    let m = 2 + (k % 9) as usize;
    let q = (k % 4) as usize;
    RandomMiqpConfig::new(n, m, p, q, 1000 + k)
}

pub fn suite_instance(k: u64) -> MiqpProblem {
    gen_random_miqp(&suite_config(k)).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Suite instance with two extra rows `a'z >= 1` and `a'z <= -1`.
pub fn infeasible_instance(k: u64) -> MiqpProblem {
    let mut d = suite_instance(5000 + k).into_data();
    let n = d.q.nrows();
    let m = d.a.nrows();
    let dir = DVector::from_fn(n, |i, _| 1.0 + ((i as u64 * 7 + k) % 5) as f64 * 0.25);
    let mut a = d.a.clone().insert_rows(m, 2, 0.0);
    a.row_mut(m).copy_from(&dir.transpose());
    a.row_mut(m + 1).copy_from(&dir.transpose());
    let mut l = d.l.clone().insert_rows(m, 2, 0.0);
    let mut u = d.u.clone().insert_rows(m, 2, 0.0);
    l[m] = 1.0;
    u[m] = f64::INFINITY;
    l[m + 1] = f64::NEG_INFINITY;
    u[m + 1] = -1.0;
    d = d.with_inequalities(a, l, u);
    d.build().unwrap()
}

/// Stopping conditions of the solver re-evaluated at the returned dual:
/// scaled residuals within `eps_g / L` and complementarity gap within
/// `eps_v / L`.
/// Root relaxations only.
pub fn residuals_hold(dual: &DualData, res: &GpadResult, eps_g: f64, eps_v: f64) -> bool {
    let inv_l = 1.0 / dual.lipschitz();
    let y = dual.condense(&res.dual);
    let v = dual.constraint_values(&y);
    let mut g = DVector::zeros(dual.n_ineq());
    let mut g_eq = DVector::zeros(dual.q());
    dual.gradient(&v, &mut g, &mut g_eq);
    let mut gap = 0.0;
    for j in 0..dual.n_ineq() {
        if !dual.is_enabled(j) {
            continue;
        }
        let s = g[j] * inv_l;
        if s > eps_g * inv_l || res.dual.lambda[j] < 0.0 {
            return false;
        }
        gap += res.dual.lambda[j] * s;
    }
    for k in 0..dual.q() {
        let s = g_eq[k] * inv_l;
        if s.abs() > eps_g * inv_l {
            return false;
        }
        gap += res.dual.nu[k] * s;
    }
    -gap <= eps_v * inv_l
}

/// Warm start equal to a full binary assignment.
pub fn full_warm_start(upper: &[bool]) -> BinaryWarmStart {
    let p = upper.len();
    BinaryWarmStart::new(
        p,
        (0..p).filter(|&i| !upper[i]),
        (0..p).filter(|&i| upper[i]),
    )
    .unwrap()
}

/// Seeded partial warm start: each binary is left out, set low or set high
/// with equal odds; at least one binary is always included.
pub fn random_partial_warm_start(p: usize, seed: u64) -> BinaryWarmStart {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for i in 0..p {
            match rng.random_range(0..3) {
                0 => lower.push(i),
                1 => upper.push(i),
                _ => {}
            }
        }
        if !lower.is_empty() || !upper.is_empty() {
            return BinaryWarmStart::new(p, lower, upper).unwrap();
        }
    }
}

/// Random instance whose binaries form consecutive groups of two, each
/// group summing to one.
pub fn sos1_instance(k: u64, groups: usize) -> (MiqpProblem, Sos1Structure) {
    let p = 2 * groups;
    let n = p + 2;
    let d = gen_random_miqp(&RandomMiqpConfig::new(n, 4, p, 0, 7000 + k))
        .unwrap()
        .into_data();
    let mut a_eq = DMatrix::zeros(groups, n);
    for g in 0..groups {
        a_eq[(g, 2 * g)] = 1.0;
        a_eq[(g, 2 * g + 1)] = 1.0;
    }
    let prob = d
        .with_equalities(a_eq, DVector::from_element(groups, 1.0))
        .build()
        .unwrap();
    let sos = Sos1Structure::new(p, (0..groups).map(|g| vec![2 * g, 2 * g + 1]).collect())
        .unwrap();
    (prob, sos)
}

pub fn tight_tolerances() -> miqp::gpad::Tolerances {
    miqp::gpad::Tolerances {
        eps_g: 1e-6,
        eps_v: 1e-6,
        max_iter: 200_000,
        ..miqp::gpad::Tolerances::default()
    }
}
