//! File formats: JSON problem files, warm-start files, CSV traces and the
//! solution block printed by the command-line tool.
//!
//! Every format carries a version: the `format`/`version` keys of a problem
//! file, and a `# miqp-<kind> <version>` first line for the text formats.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bnb::{MiqpStatus, NodeStatus, TraceRecord};
use crate::error::{Error, Result};
use crate::problem::{MiqpProblem, ProblemData};
use crate::warmstart::{BinaryWarmStart, Sos1Structure};

pub const PROBLEM_FORMAT: &str = "miqp-problem";
pub const PROBLEM_VERSION: u32 = 1;
pub const WARM_START_HEADER: &str = "# miqp-warmstart 1";
pub const TRACE_HEADER: &str = "# miqp-trace 1";
pub const SOLUTION_HEADER: &str = "# miqp-solution 1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    version: Option<u32>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
    /// `null` entries stand for `-inf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    l: Option<Vec<Option<f64>>>,
    /// `null` entries stand for `+inf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u: Option<Vec<Option<f64>>>,
    #[serde(rename = "Aeq", default, skip_serializing_if = "Option::is_none")]
    a_eq: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beq: Option<Vec<f64>>,
    #[serde(rename = "Abar", default, skip_serializing_if = "Option::is_none")]
    a_bar: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lbar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ubar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "is_zero")]
    offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<ProblemMeta>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn matrix(field: &str, rows: Option<Vec<Vec<f64>>>, n: usize) -> Result<DMatrix<f64>> {
    let rows = rows.unwrap_or_default();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                field: format!("{field}[{i}]"),
                expected: format!("{n} columns"),
                found: format!("{} columns", r.len()),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

fn with_infinity(v: Option<Vec<Option<f64>>>, fill: f64) -> DVector<f64> {
    let v = v.unwrap_or_default();
    DVector::from_iterator(v.len(), v.into_iter().map(|x| x.unwrap_or(fill)))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn finite_or_null(v: &DVector<f64>) -> Vec<Option<f64>> {
    v.iter().map(|&x| x.is_finite().then_some(x)).collect()
}

fn parse_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let field = e.path().to_string();
    let inner = e.into_inner();
    Error::Parse {
        line: inner.line(),
        column: inner.column(),
        field,
        message: inner.to_string(),
    }
}

/// Parse a problem document; shape and validity errors surface as the
/// corresponding [`Error`] variants.
pub fn parse_problem_str(text: &str) -> Result<(MiqpProblem, ProblemMeta)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ProblemFile = serde_path_to_error::deserialize(de).map_err(parse_error)?;
    if let Some(f) = &file.format {
        if f != PROBLEM_FORMAT {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                field: "format".into(),
                message: format!("expected \"{PROBLEM_FORMAT}\", found \"{f}\""),
            });
        }
    }
    if let Some(v) = file.version {
        if v != PROBLEM_VERSION {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                field: "version".into(),
                message: format!("unsupported version {v}"),
            });
        }
    }
    let n = file.c.len();
    let q = matrix("Q", Some(file.q), n)?;
    let data = ProblemData {
        q,
        c: DVector::from_vec(file.c),
        a: matrix("A", file.a, n)?,
        l: with_infinity(file.l, f64::NEG_INFINITY),
        u: with_infinity(file.u, f64::INFINITY),
        a_eq: matrix("Aeq", file.a_eq, n)?,
        b_eq: DVector::from_vec(file.beq.unwrap_or_default()),
        a_bar: matrix("Abar", file.a_bar, n)?,
        l_bar: DVector::from_vec(file.lbar.unwrap_or_default()),
        u_bar: DVector::from_vec(file.ubar.unwrap_or_default()),
        offset: file.offset,
    };
    Ok((MiqpProblem::new(data)?, file.meta.unwrap_or_default()))
}

pub fn read_problem_file(path: impl AsRef<Path>) -> Result<(MiqpProblem, ProblemMeta)> {
    let text = std::fs::read_to_string(path)?;
    parse_problem_str(&text)
}

pub fn parse_problem_file(path: impl AsRef<Path>) -> Result<MiqpProblem> {
    read_problem_file(path).map(|(p, _)| p)
}

/// Serialize a problem. Numbers use the shortest decimal form that reads
/// back to the same `f64`, so writing and re-reading is bit-exact.
pub fn problem_to_string(prob: &MiqpProblem, meta: &ProblemMeta) -> String {
    let d = prob.data();
    let some_rows = |m: &DMatrix<f64>| (m.nrows() > 0).then(|| rows_of(m));
    let file = ProblemFile {
        format: Some(PROBLEM_FORMAT.into()),
        version: Some(PROBLEM_VERSION),
        q: rows_of(&d.q),
        c: d.c.iter().copied().collect(),
        a: some_rows(&d.a),
        l: (d.a.nrows() > 0).then(|| finite_or_null(&d.l)),
        u: (d.a.nrows() > 0).then(|| finite_or_null(&d.u)),
        a_eq: some_rows(&d.a_eq),
        beq: (d.a_eq.nrows() > 0).then(|| d.b_eq.iter().copied().collect()),
        a_bar: some_rows(&d.a_bar),
        lbar: (d.a_bar.nrows() > 0).then(|| d.l_bar.iter().copied().collect()),
        ubar: (d.a_bar.nrows() > 0).then(|| d.u_bar.iter().copied().collect()),
        offset: d.offset,
        meta: (meta != &ProblemMeta::default()).then(|| meta.clone()),
    };
    serde_json::to_string(&file).expect("problem data serializes")
}

pub fn write_problem_file(path: impl AsRef<Path>, prob: &MiqpProblem, meta: &ProblemMeta) -> Result<()> {
    std::fs::write(path, problem_to_string(prob, meta) + "\n")?;
    Ok(())
}

fn text_error(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: 1,
        field: field.into(),
        message: message.into(),
    }
}

fn check_header(line: &str, header: &str, lineno: usize) -> Result<bool> {
    let kind = header.rsplit_once(' ').map(|(k, _)| k).unwrap_or(header);
    if let Some(rest) = line.strip_prefix(kind) {
        if line.trim_end() != header {
            return Err(text_error(
                lineno,
                "header",
                format!("unsupported version `{}`", rest.trim()),
            ));
        }
        return Ok(true);
    }
    Ok(false)
}

/// Warm-start file: `lower:` and `upper:` lines of 1-based binary indices.
/// Blank lines and `#` comments are ignored.
pub fn parse_warm_start(text: &str, p: usize) -> Result<BinaryWarmStart> {
    let mut lower = None;
    let mut upper = None;
    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = raw.trim();
        if check_header(line, WARM_START_HEADER, lineno)? || line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| text_error(lineno, "line", "expected `lower:` or `upper:`"))?;
        let mut idx = Vec::new();
        for tok in rest.split_whitespace() {
            let i: usize = tok
                .parse()
                .map_err(|_| text_error(lineno, key.trim(), format!("bad index `{tok}`")))?;
            if i == 0 {
                return Err(text_error(lineno, key.trim(), "indices are 1-based"));
            }
            idx.push(i - 1);
        }
        let slot = match key.trim() {
            "lower" => &mut lower,
            "upper" => &mut upper,
            other => return Err(text_error(lineno, other, "unknown key")),
        };
        if slot.is_some() {
            return Err(text_error(lineno, key.trim(), "repeated key"));
        }
        *slot = Some(idx);
    }
    BinaryWarmStart::new(p, lower.unwrap_or_default(), upper.unwrap_or_default())
}

pub fn read_warm_start(path: impl AsRef<Path>, p: usize) -> Result<BinaryWarmStart> {
    parse_warm_start(&std::fs::read_to_string(path)?, p)
}

pub fn format_warm_start(ws: &BinaryWarmStart) -> String {
    let join = |s: &std::collections::BTreeSet<usize>| {
        s.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ")
    };
    format!(
        "{WARM_START_HEADER}\nlower: {}\nupper: {}\n",
        join(&ws.lower),
        join(&ws.upper)
    )
}

/// SOS1 groups as `1,2;3,4` (1-based, groups separated by `;`).
pub fn parse_sos1_groups(text: &str, p: usize) -> Result<Sos1Structure> {
    let mut groups = Vec::new();
    for g in text.split(';').filter(|g| !g.trim().is_empty()) {
        let mut group = Vec::new();
        for tok in g.split(',') {
            let i: usize = tok
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSos1(format!("bad index `{}`", tok.trim())))?;
            if i == 0 {
                return Err(Error::InvalidSos1("indices are 1-based".into()));
            }
            group.push(i - 1);
        }
        groups.push(group);
    }
    Sos1Structure::new(p, groups)
}

const TRACE_COLUMNS: [&str; 10] = [
    "node_id",
    "parent_id",
    "fixed_lower",
    "fixed_upper",
    "status",
    "cost",
    "gpad_iters",
    "wall_ns",
    "qp_number",
    "pattern",
];

fn index_list(v: &[usize]) -> String {
    v.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ")
}

/// CSV trace, one row per popped node in pop order. Index lists are
/// 1-based and space separated; missing values are empty cells.
pub fn write_trace(mut out: impl Write, trace: &[TraceRecord]) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
    for r in trace {
        w.write_record([
            r.node_id.to_string(),
            r.parent_id.map(|p| p.to_string()).unwrap_or_default(),
            index_list(&r.fixed_lower),
            index_list(&r.fixed_upper),
            r.status.as_str().to_string(),
            if r.cost.is_nan() {
                String::new()
            } else {
                r.cost.to_string()
            },
            r.gpad_iters.to_string(),
            r.wall_ns.to_string(),
            r.qp_number.map(|q| q.to_string()).unwrap_or_default(),
            r.pattern.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(mut input: impl Read) -> Result<Vec<TraceRecord>> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let body = match text.split_once('\n') {
        Some((first, rest)) if first.starts_with('#') => {
            if first.trim_end() != TRACE_HEADER {
                return Err(text_error(1, "header", format!("unsupported trace `{first}`")));
            }
            rest
        }
        _ => text.as_str(),
    };
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let line = k + 3;
        let rec = rec.map_err(|e| text_error(line, "row", e.to_string()))?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<usize> {
            get(i)
                .parse()
                .map_err(|_| text_error(line, TRACE_COLUMNS[i], format!("bad value `{}`", get(i))))
        };
        let opt = |i: usize| -> Result<Option<usize>> {
            if get(i).is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let list = |i: usize| -> Result<Vec<usize>> {
            get(i)
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .ok()
                        .filter(|&x| x > 0)
                        .map(|x| x - 1)
                        .ok_or_else(|| text_error(line, TRACE_COLUMNS[i], format!("bad index `{t}`")))
                })
                .collect()
        };
        let status = NodeStatus::parse(get(4))
            .ok_or_else(|| text_error(line, "status", format!("unknown status `{}`", get(4))))?;
        let cost = if get(5).is_empty() {
            f64::NAN
        } else {
            get(5)
                .parse()
                .map_err(|_| text_error(line, "cost", format!("bad value `{}`", get(5))))?
        };
        out.push(TraceRecord {
            node_id: num(0)?,
            parent_id: opt(1)?,
            fixed_lower: list(2)?,
            fixed_upper: list(3)?,
            status,
            cost,
            gpad_iters: num(6)?,
            wall_ns: num(7)? as u64,
            qp_number: opt(8)?,
            pattern: get(9).to_string(),
        });
    }
    Ok(out)
}

pub fn status_str(s: MiqpStatus) -> &'static str {
    match s {
        MiqpStatus::Optimal => "optimal",
        MiqpStatus::Infeasible => "infeasible",
        MiqpStatus::Suboptimal => "suboptimal",
        MiqpStatus::NoSolution => "no_solution",
    }
}

/// Text block with status, cost and the solution vector.
pub fn format_solution(status: &str, cost: f64, z: Option<&DVector<f64>>) -> String {
    let mut s = String::new();
    writeln!(s, "{SOLUTION_HEADER}").unwrap();
    writeln!(s, "status: {status}").unwrap();
    writeln!(s, "cost: {cost}").unwrap();
    if let Some(z) = z {
        let vals: Vec<String> = z.iter().map(|x| x.to_string()).collect();
        writeln!(s, "z: {}", vals.join(" ")).unwrap();
    }
    s
}

/// Parsed form of [`format_solution`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionBlock {
    pub status: String,
    pub cost: f64,
    pub z: Option<DVector<f64>>,
}

pub fn parse_solution(text: &str) -> Result<SolutionBlock> {
    let mut status = None;
    let mut cost = None;
    let mut z = None;
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if check_header(line.trim(), SOLUTION_HEADER, lineno)? || line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let rest = rest.trim();
        match key.trim() {
            "status" => status = Some(rest.to_string()),
            "cost" => {
                cost = Some(
                    rest.parse::<f64>()
                        .map_err(|_| text_error(lineno, "cost", format!("bad value `{rest}`")))?,
                )
            }
            "z" => {
                let vals: std::result::Result<Vec<f64>, _> =
                    rest.split_whitespace().map(str::parse).collect();
                let vals = vals.map_err(|_| text_error(lineno, "z", "bad number"))?;
                z = Some(DVector::from_vec(vals));
            }
            _ => {}
        }
    }
    Ok(SolutionBlock {
        status: status.ok_or_else(|| text_error(0, "status", "missing"))?,
        cost: cost.ok_or_else(|| text_error(0, "cost", "missing"))?,
        z,
    })
}
