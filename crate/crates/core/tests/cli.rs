use std::fs;
use std::path::Path;
use std::process::Command;

use miqp::bnb::NodeStatus;
use miqp::cli::run;
use miqp::io::{parse_solution, read_problem_file, read_trace};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_miqp"))
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const ONE_BINARY: &str = r#"{"Q": [[2]], "c": [-3], "Abar": [[1]], "lbar": [0], "ubar": [1]}"#;

// z >= 1 from A, binary z in {0, 1} with A z <= 0.5.
const INFEASIBLE: &str = r#"{
  "Q": [[1]], "c": [0],
  "A": [[1]], "l": [0.8], "u": [null],
  "Abar": [[1]], "lbar": [0], "ubar": [1],
  "Aeq": [[1]], "beq": [0.5]
}"#;

// Separable quadratic centered at (0.6, 0.4, 0.3) with weights (20, 1, 4).
const WARM_START_TREE: &str = r#"{
  "Q": [[20, 0, 0], [0, 1, 0], [0, 0, 4]],
  "c": [-12, -0.4, -1.2],
  "Abar": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
  "lbar": [0, 0, 0], "ubar": [1, 1, 1]
}"#;

#[test]
fn one_binary_exits_zero_with_cost() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "one_binary.json", ONE_BINARY);
    let out = bin().args(["solve", &file]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let sol = parse_solution(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(sol.status, "optimal");
    assert!((sol.cost + 2.0).abs() < 1e-4);
    assert!((sol.z.unwrap()[0] - 1.0).abs() < 1e-4);
}

#[test]
fn infeasible_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "infeasible.json", INFEASIBLE);
    let out = dir.path().join("sol.txt");
    let code = run(["miqp", "solve", &file, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1);
    let sol = parse_solution(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(sol.status, "infeasible");
}

#[test]
fn warm_started_trace_follows_depth_first_order() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "tree.json", WARM_START_TREE);
    let ws = write(dir.path(), "tree.ws", "# miqp-warmstart 1\nlower: 2\nupper: 1\n");
    let trace = dir.path().join("t.csv");
    let code = run([
        "miqp",
        "solve",
        &file,
        "--warm-start",
        &ws,
        "--no-early-stop",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        dir.path().join("sol.txt").to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let recs = read_trace(fs::File::open(&trace).unwrap()).unwrap();
    let order: Vec<(String, Option<usize>)> =
        recs.iter().map(|r| (r.pattern.clone(), r.qp_number)).collect();
    let expected = [
        ("***", Some(1)),
        ("1**", None),
        ("10*", None),
        ("100", Some(2)),
        ("101", Some(3)),
        ("11*", Some(4)),
        ("110", Some(5)),
        ("111", Some(6)),
        ("0**", Some(7)),
    ];
    let expected: Vec<(String, Option<usize>)> =
        expected.iter().map(|(p, k)| (p.to_string(), *k)).collect();
    assert_eq!(order, expected);
    assert_eq!(recs[1].status, NodeStatus::SkippedNoQp);
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "bad.json", r#"{"Q": [[1, 0]], "c": [0]}"#);
    assert_eq!(run(["miqp", "solve", &file]), 2);
    assert_eq!(run(["miqp", "solve", "/nonexistent/problem.json"]), 2);
    assert_eq!(run(["miqp", "frobnicate"]), 2);
}

#[test]
fn heuristic_reports_suboptimal_code() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "one_binary.json", ONE_BINARY);
    let out = dir.path().join("sol.txt");
    let code = run(["miqp", "solve", &file, "--heuristic", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3);
    let sol = parse_solution(&fs::read_to_string(out).unwrap()).unwrap();
    assert!((sol.cost + 2.0).abs() < 1e-4);
}

#[test]
fn generated_problems_parse_and_solve() {
    let dir = tempfile::tempdir().unwrap();
    let rnd = dir.path().join("r.json");
    let code = run([
        "miqp", "gen", "random", "--n", "6", "--m", "8", "--p", "3", "--q", "1", "--seed", "4",
        "--out", rnd.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let prob = read_problem_file(&rnd).unwrap().0;
    assert_eq!((prob.n(), prob.m(), prob.p(), prob.q_eq()), (6, 8, 3, 1));

    let solved = dir.path().join("s.txt");
    let checked = dir.path().join("o.txt");
    assert_eq!(run(["miqp", "solve", rnd.to_str().unwrap(), "--out", solved.to_str().unwrap()]), 0);
    assert_eq!(run(["miqp", "oracle", rnd.to_str().unwrap(), "--out", checked.to_str().unwrap()]), 0);
    let a = parse_solution(&fs::read_to_string(solved).unwrap()).unwrap();
    let b = parse_solution(&fs::read_to_string(checked).unwrap()).unwrap();
    assert!((a.cost - b.cost).abs() <= 1e-4 * b.cost.abs().max(1.0));

    let veh = dir.path().join("v.json");
    assert_eq!(run(["miqp", "gen", "vehicle", "--horizon", "4", "--out", veh.to_str().unwrap()]), 0);
    assert_eq!(read_problem_file(&veh).unwrap().0.p(), 4);

    let arx = dir.path().join("a.json");
    assert_eq!(run(["miqp", "gen", "arx", "--samples", "8", "--out", arx.to_str().unwrap()]), 0);
    assert_eq!(read_problem_file(&arx).unwrap().0.p(), 21);
}
