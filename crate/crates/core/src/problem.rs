//! MIQP problem data.
//!
//! ```text
//! min  1/2 z'Qz + c'z
//! s.t. l <= A z <= u
//!      Aeq z = beq
//!      Abar_i z in {lbar_i, ubar_i},  i = 1..p
//! ```
//!
//! The QP relaxation replaces the last line by `lbar <= Abar z <= ubar`, with
//! some of the rows pinned to one of their bounds (see [`RelaxationSpec`]).

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Raw problem arrays as supplied by a caller or read from a file.
///
/// Empty blocks are allowed: an `A` with zero rows, no equalities, no
/// binary rows. `l`/`u` may hold infinities for one-sided rows; the binary
/// bounds `lbar`/`ubar` must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_bar: DMatrix<f64>,
    pub l_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
    /// Constant added to reported objective values; not part of `V(z)`.
    pub offset: f64,
}

impl ProblemData {
    /// Unconstrained problem with the given cost; all constraint blocks empty.
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            q,
            c,
            a: DMatrix::zeros(0, n),
            l: DVector::zeros(0),
            u: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_bar: DMatrix::zeros(0, n),
            l_bar: DVector::zeros(0),
            u_bar: DVector::zeros(0),
            offset: 0.0,
        }
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, l: DVector<f64>, u: DVector<f64>) -> Self {
        self.a = a;
        self.l = l;
        self.u = u;
        self
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_binaries(
        mut self,
        a_bar: DMatrix<f64>,
        l_bar: DVector<f64>,
        u_bar: DVector<f64>,
    ) -> Self {
        self.a_bar = a_bar;
        self.l_bar = l_bar;
        self.u_bar = u_bar;
        self
    }

    /// Binary variables on the first `p` coordinates: identity rows of `Abar`
    /// with bounds `{0, 1}`.
    pub fn with_unit_binaries(self, p: usize) -> Self {
        let n = self.c.len();
        let a_bar = DMatrix::from_fn(p, n, |i, j| if i == j { 1.0 } else { 0.0 });
        self.with_binaries(a_bar, DVector::zeros(p), DVector::from_element(p, 1.0))
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn build(self) -> Result<MiqpProblem> {
        MiqpProblem::new(self)
    }
}

/// A validated MIQP with a cached Cholesky factor of `Q`.
#[derive(Debug, Clone)]
pub struct MiqpProblem {
    data: ProblemData,
    chol: Cholesky<f64, Dyn>,
}

fn mismatch(field: &str, expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        field: field.to_string(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

fn check_shape(field: &str, m: &DMatrix<f64>, rows: Option<usize>, cols: usize) -> Result<()> {
    if m.ncols() != cols || rows.is_some_and(|r| r != m.nrows()) {
        let expected = match rows {
            Some(r) => format!("{r}x{cols}"),
            None => format!("?x{cols}"),
        };
        return Err(mismatch(field, expected, format!("{}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn check_len(field: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(mismatch(field, len, v.len()));
    }
    Ok(())
}

fn check_finite<'a>(field: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for (index, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                field: field.to_string(),
                index,
            });
        }
    }
    Ok(())
}

impl MiqpProblem {
    pub fn new(data: ProblemData) -> Result<Self> {
        let n = data.c.len();
        check_shape("Q", &data.q, Some(n), n)?;
        check_shape("A", &data.a, None, n)?;
        let m = data.a.nrows();
        check_len("l", &data.l, m)?;
        check_len("u", &data.u, m)?;
        check_shape("Aeq", &data.a_eq, None, n)?;
        check_len("beq", &data.b_eq, data.a_eq.nrows())?;
        check_shape("Abar", &data.a_bar, None, n)?;
        let p = data.a_bar.nrows();
        check_len("lbar", &data.l_bar, p)?;
        check_len("ubar", &data.u_bar, p)?;

        check_finite("Q", data.q.iter())?;
        check_finite("c", data.c.iter())?;
        check_finite("A", data.a.iter())?;
        check_finite("Aeq", data.a_eq.iter())?;
        check_finite("beq", data.b_eq.iter())?;
        check_finite("Abar", data.a_bar.iter())?;
        check_finite("lbar", data.l_bar.iter())?;
        check_finite("ubar", data.u_bar.iter())?;
        check_finite("offset", std::iter::once(&data.offset))?;
        for i in 0..m {
            let (lo, hi) = (data.l[i], data.u[i]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::NonFinite {
                    field: if lo.is_nan() || lo == f64::INFINITY { "l" } else { "u" }.into(),
                    index: i,
                });
            }
            if lo > hi {
                return Err(Error::BoundsInverted {
                    field: "l/u".into(),
                    index: i,
                });
            }
        }
        for i in 0..p {
            if data.l_bar[i] >= data.u_bar[i] {
                return Err(Error::BoundsInverted {
                    field: "lbar/ubar".into(),
                    index: i,
                });
            }
        }

        let asym = (&data.q - data.q.transpose()).amax();
        if asym > 1e-12 * data.q.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = Cholesky::new(data.q.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { data, chol })
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    pub fn into_data(self) -> ProblemData {
        self.data
    }

    pub fn n(&self) -> usize {
        self.data.c.len()
    }

    pub fn m(&self) -> usize {
        self.data.a.nrows()
    }

    pub fn q_eq(&self) -> usize {
        self.data.a_eq.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.a_bar.nrows()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.data.q
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.data.c
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn offset(&self) -> f64 {
        self.data.offset
    }

    /// `V(z) = 1/2 z'Qz + c'z` (without the reporting offset).
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.data.q * z)) + self.data.c.dot(z)
    }

    /// Linear forms `Abar z` whose values must hit one of the binary bounds.
    pub fn binary_values(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.data.a_bar * z
    }

    pub fn binary_midpoint(&self, i: usize) -> f64 {
        0.5 * (self.data.l_bar[i] + self.data.u_bar[i])
    }

    /// True when `Abar_i z` sits within `tol` of `lbar_i` or `ubar_i`.
    pub fn is_integral(&self, i: usize, t: f64, tol: f64) -> bool {
        (t - self.data.l_bar[i]).abs() <= tol || (t - self.data.u_bar[i]).abs() <= tol
    }

    /// Constraint violations of `z` against the full MIQP.
    pub fn violation(&self, z: &DVector<f64>) -> Violation {
        let d = &self.data;
        let az = &d.a * z;
        let mut inequality = 0.0f64;
        for i in 0..az.len() {
            inequality = inequality.max(d.l[i] - az[i]).max(az[i] - d.u[i]);
        }
        let equality = if d.a_eq.nrows() > 0 {
            (&d.a_eq * z - &d.b_eq).amax()
        } else {
            0.0
        };
        let t = &d.a_bar * z;
        let mut integrality = 0.0f64;
        for i in 0..t.len() {
            let gap = (t[i] - d.l_bar[i]).abs().min((t[i] - d.u_bar[i]).abs());
            integrality = integrality.max(gap);
        }
        Violation {
            inequality,
            equality,
            integrality,
        }
    }

    /// Violation of a relaxation: binary rows in `spec` pinned as equalities,
    /// free binary rows treated as interval constraints.
    pub fn relaxation_violation(&self, z: &DVector<f64>, spec: &RelaxationSpec) -> f64 {
        let d = &self.data;
        let v = self.violation(z);
        let t = &d.a_bar * z;
        let mut worst = v.inequality.max(v.equality);
        for i in 0..t.len() {
            let r = if spec.fixed_lower.contains(&i) {
                (t[i] - d.l_bar[i]).abs()
            } else if spec.fixed_upper.contains(&i) {
                (t[i] - d.u_bar[i]).abs()
            } else {
                (d.l_bar[i] - t[i]).max(t[i] - d.u_bar[i]).max(0.0)
            };
            worst = worst.max(r);
        }
        worst
    }
}

/// Worst-case constraint violations of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub inequality: f64,
    pub equality: f64,
    /// Distance of `Abar_i z` to the nearer binary bound, maximized over `i`.
    pub integrality: f64,
}

impl Violation {
    /// Largest violation of the continuous constraints.
    pub fn continuous(&self) -> f64 {
        self.inequality.max(self.equality).max(0.0)
    }
}

/// Which binary rows are pinned in a QP relaxation (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RelaxationSpec {
    pub fixed_lower: BTreeSet<usize>,
    pub fixed_upper: BTreeSet<usize>,
    p: usize,
}

impl RelaxationSpec {
    /// Root relaxation: nothing pinned.
    pub fn root(p: usize) -> Self {
        Self {
            fixed_lower: BTreeSet::new(),
            fixed_upper: BTreeSet::new(),
            p,
        }
    }

    pub fn new(
        p: usize,
        fixed_lower: impl IntoIterator<Item = usize>,
        fixed_upper: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let fixed_lower: BTreeSet<usize> = fixed_lower.into_iter().collect();
        let fixed_upper: BTreeSet<usize> = fixed_upper.into_iter().collect();
        if let Some(&i) = fixed_lower.iter().chain(fixed_upper.iter()).find(|&&i| i >= p) {
            return Err(Error::Config(format!("binary index {i} out of range 0..{p}")));
        }
        if let Some(i) = fixed_lower.intersection(&fixed_upper).next() {
            return Err(Error::Config(format!(
                "binary index {i} pinned to both bounds"
            )));
        }
        Ok(Self {
            fixed_lower,
            fixed_upper,
            p,
        })
    }

    /// Every binary pinned according to `upper[i]`.
    pub fn leaf(upper: &[bool]) -> Self {
        let mut spec = Self::root(upper.len());
        for (i, &up) in upper.iter().enumerate() {
            if up {
                spec.fixed_upper.insert(i);
            } else {
                spec.fixed_lower.insert(i);
            }
        }
        spec
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Free binary rows `J`, ascending.
    pub fn free(&self) -> Vec<usize> {
        (0..self.p)
            .filter(|i| !self.fixed_lower.contains(i) && !self.fixed_upper.contains(i))
            .collect()
    }

    pub fn is_leaf(&self) -> bool {
        self.fixed_lower.len() + self.fixed_upper.len() == self.p
    }

    pub fn with_lower(&self, j: usize) -> Self {
        let mut s = self.clone();
        s.fixed_upper.remove(&j);
        s.fixed_lower.insert(j);
        s
    }

    pub fn with_upper(&self, j: usize) -> Self {
        let mut s = self.clone();
        s.fixed_lower.remove(&j);
        s.fixed_upper.insert(j);
        s
    }

    /// Compact `0/1/*` rendering used in traces and tests, e.g. `10*`.
    pub fn pattern(&self) -> String {
        (0..self.p)
            .map(|i| {
                if self.fixed_lower.contains(&i) {
                    '0'
                } else if self.fixed_upper.contains(&i) {
                    '1'
                } else {
                    '*'
                }
            })
            .collect()
    }
}
