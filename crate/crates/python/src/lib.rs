//! Python bindings. Matrices cross the boundary as lists of rows.

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use miqp::bnb::{bnb_solve, BnbOptions, MiqpResult, MiqpStatus, WarmStartRule};
use miqp::dual::DualData;
use miqp::gpad::Tolerances;
use miqp::heuristics::{heuristic_solve, midway_solve, HeuristicStatus, MidwayMode, MidwayOptions};
use miqp::io::{problem_to_string, status_str, ProblemMeta};
use miqp::oracle::{enumerate_miqp, OracleStatus};
use miqp::problem::{MiqpProblem, ProblemData};
use miqp::problems::{
    build_arx_segmentation, build_hybrid_vehicle, gen_random_miqp, prbs, simulate_transport_delay,
    ArxSegConfig, RandomMiqpConfig, VehicleConfig, ARX_PRBS_STATE,
};
use miqp::warmstart::BinaryWarmStart;

fn err(e: miqp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>], ncols: usize, field: &str) -> PyResult<DMatrix<f64>> {
    if let Some(r) = rows.iter().position(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!(
            "row {r} of {field} has {} entries, expected {ncols}",
            rows[r].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A validated MIQP instance.
#[pyclass(name = "Problem", module = "miqp_py", frozen)]
#[derive(Clone)]
struct PyProblem {
    inner: MiqpProblem,
}

#[pymethods]
impl PyProblem {
    /// Build from dense data; omitted constraint blocks are empty. With
    /// `binaries` set, the first `binaries` coordinates are 0/1 variables and
    /// `Abar`, `lbar`, `ubar` must be omitted.
    #[new]
    #[pyo3(signature = (q, c, a=None, l=None, u=None, a_eq=None, b_eq=None, a_bar=None, l_bar=None, u_bar=None, binaries=None, offset=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        q: Vec<Vec<f64>>,
        c: Vec<f64>,
        a: Option<Vec<Vec<f64>>>,
        l: Option<Vec<f64>>,
        u: Option<Vec<f64>>,
        a_eq: Option<Vec<Vec<f64>>>,
        b_eq: Option<Vec<f64>>,
        a_bar: Option<Vec<Vec<f64>>>,
        l_bar: Option<Vec<f64>>,
        u_bar: Option<Vec<f64>>,
        binaries: Option<usize>,
        offset: f64,
    ) -> PyResult<Self> {
        let n = c.len();
        let mut data = ProblemData::new(matrix(&q, n, "Q")?, DVector::from_vec(c)).with_offset(offset);
        if let Some(a) = a {
            data = data.with_inequalities(
                matrix(&a, n, "A")?,
                DVector::from_vec(l.unwrap_or_else(|| vec![f64::NEG_INFINITY; a.len()])),
                DVector::from_vec(u.unwrap_or_else(|| vec![f64::INFINITY; a.len()])),
            );
        }
        if let Some(a_eq) = a_eq {
            let b = b_eq.ok_or_else(|| PyValueError::new_err("a_eq given without b_eq"))?;
            data = data.with_equalities(matrix(&a_eq, n, "Aeq")?, DVector::from_vec(b));
        }
        match (binaries, a_bar) {
            (Some(_), Some(_)) => return Err(PyValueError::new_err("give either binaries or a_bar")),
            (Some(p), None) => data = data.with_unit_binaries(p),
            (None, Some(ab)) => {
                let k = ab.len();
                data = data.with_binaries(
                    matrix(&ab, n, "Abar")?,
                    DVector::from_vec(l_bar.unwrap_or_else(|| vec![0.0; k])),
                    DVector::from_vec(u_bar.unwrap_or_else(|| vec![1.0; k])),
                );
            }
            (None, None) => {}
        }
        Ok(Self {
            inner: data.build().map_err(err)?,
        })
    }

    /// Parse a problem from its JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (inner, _) = miqp::io::parse_problem_str(text).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let (inner, _) = miqp::io::read_problem_file(path).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        problem_to_string(&self.inner, &ProblemMeta::default())
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn q_eq(&self) -> usize {
        self.inner.q_eq()
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.inner.offset()
    }

    #[getter]
    fn hessian(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.hessian())
    }

    /// `z'Qz/2 + c'z`, without the offset.
    fn objective(&self, z: Vec<f64>) -> PyResult<f64> {
        if z.len() != self.inner.n() {
            return Err(PyValueError::new_err(format!("expected {} entries", self.inner.n())));
        }
        Ok(self.inner.objective(&DVector::from_vec(z)))
    }

    /// Largest constraint and integrality violation of `z`.
    fn violation(&self, z: Vec<f64>) -> PyResult<(f64, f64)> {
        if z.len() != self.inner.n() {
            return Err(PyValueError::new_err(format!("expected {} entries", self.inner.n())));
        }
        let v = self.inner.violation(&DVector::from_vec(z));
        Ok((v.continuous(), v.integrality))
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(n={}, m={}, p={}, q={})",
            self.inner.n(),
            self.inner.m(),
            self.inner.p(),
            self.inner.q_eq()
        )
    }
}

/// Outcome of a branch-and-bound or mid-way solve.
#[pyclass(name = "Result", module = "miqp_py", frozen, get_all)]
struct PyResult_ {
    status: String,
    /// `V(z)` plus the problem offset; `inf` without a solution.
    cost: f64,
    z: Option<Vec<f64>>,
    qp_solved: usize,
    qp_optimal: usize,
    nodes_popped: usize,
    nodes_skipped_noqp: usize,
    gpad_iters: usize,
    /// `(node_id, parent_id, pattern, status, cost)` per popped node.
    trace: Vec<(usize, Option<usize>, String, String, f64)>,
}

#[pymethods]
impl PyResult_ {
    fn __repr__(&self) -> String {
        format!(
            "Result(status={:?}, cost={}, qp_solved={})",
            self.status, self.cost, self.qp_solved
        )
    }
}

fn wrap(r: MiqpResult, offset: f64) -> PyResult_ {
    let cost = if r.status == MiqpStatus::Infeasible || r.zeta.is_none() {
        f64::INFINITY
    } else {
        r.cost + offset
    };
    PyResult_ {
        status: status_str(r.status).to_string(),
        cost,
        z: r.zeta.map(|z| z.iter().copied().collect()),
        qp_solved: r.qp_solved,
        qp_optimal: r.qp_optimal,
        nodes_popped: r.nodes_popped,
        nodes_skipped_noqp: r.nodes_skipped_noqp,
        gpad_iters: r.gpad_iters,
        trace: r
            .trace
            .into_iter()
            .map(|t| (t.node_id, t.parent_id, t.pattern, t.status.as_str().to_string(), t.cost))
            .collect(),
    }
}

fn tolerances(eps_g: f64, eps_v: f64, max_iter: usize) -> PyResult<Tolerances> {
    let tol = Tolerances {
        eps_g,
        eps_v,
        max_iter,
        ..Tolerances::default()
    };
    tol.validate().map_err(err)?;
    Ok(tol)
}

#[allow(clippy::too_many_arguments)]
fn bnb_options(
    prob: &MiqpProblem,
    warm_lower: Option<Vec<usize>>,
    warm_upper: Option<Vec<usize>>,
    max_fractional: bool,
    early_stop: bool,
    time_limit: Option<f64>,
    max_nodes: Option<usize>,
    trace: bool,
) -> PyResult<BnbOptions> {
    let warm_start = match (warm_lower, warm_upper) {
        (None, None) => None,
        (lo, up) => Some(
            BinaryWarmStart::new(prob.p(), lo.unwrap_or_default(), up.unwrap_or_default()).map_err(err)?,
        ),
    };
    Ok(BnbOptions {
        warm_start,
        warm_rule: if max_fractional {
            WarmStartRule::MaxFractional
        } else {
            WarmStartRule::SmallestIndex
        },
        early_stop,
        time_limit: time_limit.map(Duration::from_secs_f64),
        max_nodes,
        record_trace: trace,
        ..BnbOptions::default()
    })
}

/// Solve by branch and bound. Warm-start indices are 0-based.
#[pyfunction]
#[pyo3(signature = (problem, *, warm_lower=None, warm_upper=None, max_fractional=false, early_stop=true, time_limit=None, max_nodes=None, eps_g=1e-5, eps_v=1e-5, max_iter=10_000, trace=false))]
#[allow(clippy::too_many_arguments)]
fn solve(
    problem: &PyProblem,
    warm_lower: Option<Vec<usize>>,
    warm_upper: Option<Vec<usize>>,
    max_fractional: bool,
    early_stop: bool,
    time_limit: Option<f64>,
    max_nodes: Option<usize>,
    eps_g: f64,
    eps_v: f64,
    max_iter: usize,
    trace: bool,
) -> PyResult<PyResult_> {
    let prob = &problem.inner;
    let tol = tolerances(eps_g, eps_v, max_iter)?;
    let opts = bnb_options(prob, warm_lower, warm_upper, max_fractional, early_stop, time_limit, max_nodes, trace)?;
    let dual = DualData::new(prob).map_err(err)?;
    let r = bnb_solve(prob, &dual, &tol, &opts).map_err(err)?;
    Ok(wrap(r, prob.offset()))
}

/// Heuristic feasible point: `(found, cost, z)` with the cost including
/// the offset.
#[pyfunction]
#[pyo3(signature = (problem, *, eps_int=1e-4, eps_g=1e-5, eps_v=1e-5, max_iter=10_000))]
fn heuristic(
    problem: &PyProblem,
    eps_int: f64,
    eps_g: f64,
    eps_v: f64,
    max_iter: usize,
) -> PyResult<(bool, f64, Option<Vec<f64>>)> {
    let prob = &problem.inner;
    let tol = tolerances(eps_g, eps_v, max_iter)?;
    let dual = DualData::new(prob).map_err(err)?;
    let h = heuristic_solve(prob, &dual, &tol, eps_int).map_err(err)?;
    let found = h.status == HeuristicStatus::Feasible;
    Ok((
        found,
        if found { h.v_h + prob.offset() } else { f64::INFINITY },
        h.z_h.map(|z| z.iter().copied().collect()),
    ))
}

/// Heuristic followed by branch and bound on the undecided binaries.
#[pyfunction]
#[pyo3(signature = (problem, *, prioritize=false, time_limit=None, eps_g=1e-5, eps_v=1e-5, max_iter=10_000))]
fn midway(
    problem: &PyProblem,
    prioritize: bool,
    time_limit: Option<f64>,
    eps_g: f64,
    eps_v: f64,
    max_iter: usize,
) -> PyResult<PyResult_> {
    let prob = &problem.inner;
    let tol = tolerances(eps_g, eps_v, max_iter)?;
    let mut opts = MidwayOptions {
        mode: if prioritize {
            MidwayMode::Prioritize
        } else {
            MidwayMode::HardFix
        },
        ..MidwayOptions::default()
    };
    opts.bnb.time_limit = time_limit.map(Duration::from_secs_f64);
    opts.bnb.record_trace = false;
    let dual = DualData::new(prob).map_err(err)?;
    let r = midway_solve(prob, &dual, &tol, &opts).map_err(err)?;
    Ok(wrap(r.result, prob.offset()))
}

/// Exact solve by enumerating every binary fixing (small `p` only):
/// `(feasible, cost, z, fixing)`.
#[pyfunction]
fn enumerate(problem: &PyProblem) -> PyResult<(bool, f64, Vec<f64>, Option<Vec<bool>>)> {
    let prob = &problem.inner;
    let o = enumerate_miqp(prob).map_err(err)?;
    let feasible = o.status == OracleStatus::Optimal;
    Ok((
        feasible,
        if feasible { o.cost + prob.offset() } else { f64::INFINITY },
        o.z.iter().copied().collect(),
        o.fixing,
    ))
}

#[pyfunction]
fn random_problem(n: usize, m: usize, p: usize, q: usize, seed: u64) -> PyResult<PyProblem> {
    let inner = gen_random_miqp(&RandomMiqpConfig::new(n, m, p, q, seed)).map_err(err)?;
    Ok(PyProblem { inner })
}

#[pyfunction]
fn vehicle_problem(horizon: usize, seed: u64) -> PyResult<PyProblem> {
    let inner = build_hybrid_vehicle(&VehicleConfig::seeded(horizon, seed)).map_err(err)?;
    Ok(PyProblem { inner })
}

/// Switched ARX identification on simulated transport-delay data.
#[pyfunction]
#[pyo3(signature = (samples, switch_time, noise_var=0.1, gamma=0.7, seed=0))]
fn arx_problem(samples: usize, switch_time: usize, noise_var: f64, gamma: f64, seed: u64) -> PyResult<PyProblem> {
    let u = prbs(samples, ARX_PRBS_STATE);
    let y = simulate_transport_delay(&u, switch_time, noise_var, seed);
    let inner = build_arx_segmentation(&ArxSegConfig::new(y, u, gamma)).map_err(err)?;
    Ok(PyProblem { inner })
}

#[pymodule]
fn miqp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyResult_>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(heuristic, m)?)?;
    m.add_function(wrap_pyfunction!(midway, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate, m)?)?;
    m.add_function(wrap_pyfunction!(random_problem, m)?)?;
    m.add_function(wrap_pyfunction!(vehicle_problem, m)?)?;
    m.add_function(wrap_pyfunction!(arx_problem, m)?)?;
    Ok(())
}
