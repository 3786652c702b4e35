mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use miqp::dual::{DualData, DualOptions, DualVector, LipschitzEstimate};
use miqp::gpad::{
    check_infeasibility, gpad_solve, gpad_solve_traced, GpadMode, GpadStatus, RestartRule,
    Tolerances,
};
use miqp::oracle::{reference_qp_solve, OracleStatus};
use miqp::problem::{ProblemData, RelaxationSpec};
use miqp::problems::{gen_random_miqp, RandomMiqpConfig};

fn tight() -> Tolerances {
    Tolerances {
        eps_g: 1e-6,
        eps_v: 1e-6,
        max_iter: 200_000,
        ..Tolerances::default()
    }
}

#[test]
fn interior_optimum() {
    let prob = ProblemData::new(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, -1.0]))
        .with_inequalities(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::from_element(2, 2.0),
        )
        .build()
        .unwrap();
    let dual = DualData::new(&prob).unwrap();
    let r = gpad_solve(&dual, &RelaxationSpec::root(0), &tight(), None, None, GpadMode::Standard);
    assert_eq!(r.status, GpadStatus::Optimal);
    assert!((r.z[0] - 1.0).abs() < 1e-4 && (r.z[1] - 1.0).abs() < 1e-4);
    assert!((r.cost + 1.0).abs() < 1e-4);
}

#[test]
fn contradictory_rows_give_certificate() {
    let prob = ProblemData::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
        .with_inequalities(
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_vec(vec![1.0, -2.0]),
            DVector::from_vec(vec![2.0, 0.0]),
        )
        .build()
        .unwrap();
    let dual = DualData::new(&prob).unwrap();
    let tol = Tolerances {
        max_iter: 5000,
        ..Tolerances::default()
    };
    let r = gpad_solve(&dual, &RelaxationSpec::root(0), &tol, None, None, GpadMode::Standard);
    assert_eq!(r.status, GpadStatus::Infeasible);
    let cert = r.certificate.unwrap();
    assert!(cert.mu.iter().all(|&x| x >= 0.0));
    assert!(cert.verify(&dual, 1e-2));
}

#[test]
fn fixed_binary() {
    let prob = ProblemData::new(DMatrix::from_element(1, 1, 2.0), DVector::from_vec(vec![-3.0]))
        .with_unit_binaries(1)
        .build()
        .unwrap();
    let dual = DualData::new(&prob).unwrap();
    let spec = RelaxationSpec::new(1, [], [0]).unwrap();
    let r = gpad_solve(&dual, &spec, &tight(), None, None, GpadMode::Standard);
    assert_eq!(r.status, GpadStatus::Optimal);
    assert!((r.z[0] - 1.0).abs() < 1e-4);
    assert!((r.cost + 2.0).abs() < 1e-4);
}

#[test]
fn random_qp_matches_reference() {
    let prob = gen_random_miqp(&RandomMiqpConfig::new(6, 10, 0, 2, 17)).unwrap();
    let dual = DualData::new(&prob).unwrap();
    let spec = RelaxationSpec::root(0);
    let r = gpad_solve(&dual, &spec, &tight(), None, None, GpadMode::Standard);
    let o = reference_qp_solve(&prob, &spec).unwrap();
    assert_eq!(r.status, GpadStatus::Optimal);
    assert!((&r.z - &o.z).amax() < 1e-3);
    assert!(residuals_hold(&dual, &r, 1e-6, 1e-6));
}

#[test]
fn zero_dual_never_certifies() {
    let prob = suite_instance(3);
    let dual = DualData::new(&prob).unwrap();
    let eta = DualVector::zeros(dual.n_ineq(), dual.q());
    assert!(check_infeasibility(&dual, &eta, &Tolerances::default()).is_none());
}

#[test]
fn feasible_runs_never_certify() {
    for k in 0..30 {
        let prob = suite_instance(k);
        let dual = DualData::new(&prob).unwrap();
        let r = gpad_solve(&dual, &RelaxationSpec::root(prob.p()), &tight(), None, None, GpadMode::Standard);
        assert_ne!(r.status, GpadStatus::Infeasible, "instance {k}");
    }
}

#[test]
fn early_stop_reports_bound_at_least_incumbent() {
    let prob = suite_instance(11);
    let dual = DualData::new(&prob).unwrap();
    let spec = RelaxationSpec::root(prob.p());
    let opt = gpad_solve(&dual, &spec, &tight(), None, None, GpadMode::Standard);
    let v0 = opt.cost - 0.5 * opt.cost.abs().max(1.0);
    let r = gpad_solve(&dual, &spec, &tight(), None, Some(v0), GpadMode::Standard);
    assert_eq!(r.status, GpadStatus::EarlyStopped);
    assert!(r.cost >= v0);
    assert!(r.iters <= opt.iters);
}

#[test]
fn hard_and_soft_restarts_agree() {
    for k in 0..10 {
        let prob = suite_instance(k);
        let dual = DualData::new(&prob).unwrap();
        let spec = RelaxationSpec::root(prob.p());
        let mut costs = Vec::new();
        for restart in [RestartRule::SoftAssign, RestartRule::HardReset, RestartRule::None] {
            let tol = Tolerances { restart, ..tight() };
            let r = gpad_solve(&dual, &spec, &tol, None, None, GpadMode::Standard);
            assert_eq!(r.status, GpadStatus::Optimal);
            costs.push(r.cost);
        }
        assert!(rel_close(costs[0], costs[1], 1e-4) && rel_close(costs[0], costs[2], 1e-4));
    }
}

#[test]
fn dual_scaling_examples() {
    let prob = ProblemData::new(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_inequalities(
            DMatrix::from_row_slice(1, 2, &[2.0, 0.0]),
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
        )
        .build()
        .unwrap();
    let dual = DualData::new(&prob).unwrap();
    assert!((dual.theta()[0] - 0.5).abs() < 1e-15);
    let s = dual.stacked_matrix();
    assert!((s[(0, 0)] - 1.0).abs() < 1e-15 && s[(0, 1)] == 0.0);
    assert!((dual.b_stacked()[0] - 0.5).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaled_hessian_has_unit_diagonal_and_bounded_lipschitz(
        n in 2usize..8, m in 1usize..8, seed in 0u64..1000,
    ) {
        let p = n.min(3);
        let q = (seed % 2) as usize;
        let prob = gen_random_miqp(&RandomMiqpConfig::new(n, m, p, q, seed)).unwrap();
        let dual = DualData::new(&prob).unwrap();
        let h = dual.dual_hessian();
        for j in 0..h.nrows() {
            prop_assert!((h[(j, j)] - 1.0).abs() < 1e-10);
        }
        prop_assert!(dual.lipschitz() <= h.norm() * 1.001 + 1e-9);
        let fro = DualData::with_options(&prob, &DualOptions {
            lipschitz: LipschitzEstimate::Frobenius,
            ..DualOptions::default()
        }).unwrap();
        prop_assert!(fro.used_frobenius_fallback() || fro.lipschitz() >= dual.lipschitz() / 1.001 - 1e-9);
        let again = DualData::new(&prob).unwrap();
        prop_assert_eq!(again.lipschitz().to_bits(), dual.lipschitz().to_bits());
    }

    #[test]
    fn weak_duality_along_iterates(seed in 0u64..1000) {
        let prob = gen_random_miqp(&RandomMiqpConfig::new(6, 6, 3, 1, seed)).unwrap();
        let spec = RelaxationSpec::root(3);
        let o = reference_qp_solve(&prob, &spec).unwrap();
        prop_assume!(o.status == OracleStatus::Optimal);
        let bound = prob.objective(&o.z) - prob.offset();
        let dual = DualData::new(&prob).unwrap();
        let mut worst = f64::NEG_INFINITY;
        let mut cb = |info: miqp::gpad::IterInfo| worst = worst.max(info.psi);
        let r = gpad_solve_traced(&dual, &spec, &tight(), None, None, GpadMode::Standard, Some(&mut cb));
        prop_assert_eq!(r.status, GpadStatus::Optimal);
        prop_assert!(worst <= bound + 1e-6 * bound.abs().max(1.0));
    }

    #[test]
    fn optimal_exit_satisfies_stopping_rule(seed in 0u64..1000) {
        let prob = gen_random_miqp(&RandomMiqpConfig::new(8, 6, 4, 2, seed)).unwrap();
        let dual = DualData::new(&prob).unwrap();
        let r = gpad_solve(&dual, &RelaxationSpec::root(4), &tight(), None, None, GpadMode::Standard);
        prop_assert_eq!(r.status, GpadStatus::Optimal);
        prop_assert!(residuals_hold(&dual, &r, 1e-6, 1e-6));
    }
}

// Feasible leaf whose optimal multipliers are large enough to pass the
// relative certificate test on their own.
#[test]
fn large_multipliers_are_not_a_certificate() {
    let prob = suite_instance(55);
    let dual = DualData::new(&prob).unwrap();
    let fix = miqp::oracle::enumerate_miqp(&prob).unwrap().fixing.unwrap();
    let leaf = RelaxationSpec::leaf(&fix);
    let eager = Tolerances {
        infeas_growth: 1.0,
        ..Tolerances::default()
    };
    assert_eq!(gpad_solve(&dual, &leaf, &eager, None, None, GpadMode::Standard).status, GpadStatus::Infeasible);
    let r = gpad_solve(&dual, &leaf, &Tolerances::default(), None, None, GpadMode::Standard);
    assert_eq!(r.status, GpadStatus::Optimal);
    assert!(check_infeasibility(&dual, &r.dual, &Tolerances::default()).is_some());
}
