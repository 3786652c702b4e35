mod common;

use common::*;
use nalgebra::{DMatrix, DVector};

use miqp::bnb::{bnb_solve, BnbOptions, MiqpStatus};
use miqp::dual::DualData;
use miqp::gpad::Tolerances;
use miqp::heuristics::{heuristic_solve, HeuristicStatus};
use miqp::oracle::{enumerate_miqp, OracleStatus};
use miqp::problem::MiqpProblem;
use miqp::problems::{
    build_arx_segmentation, build_hybrid_vehicle, build_l0_lagrangian, prbs,
    simulate_transport_delay, ArxSegConfig, VehicleConfig, VehicleLayout, ARX_PRBS_STATE,
};

fn bnb(prob: &MiqpProblem) -> miqp::bnb::MiqpResult {
    let dual = DualData::new(prob).unwrap();
    bnb_solve(prob, &dual, &tight_tolerances(), &BnbOptions::default()).unwrap()
}

fn one_step(p_des: f64, e0: f64, delta: f64) -> VehicleConfig {
    VehicleConfig {
        p_des: vec![p_des],
        e0,
        delta,
        ..VehicleConfig::seeded(1, 0)
    }
}

#[test]
fn vehicle_zero_demand_keeps_engine_off() {
    let prob = build_hybrid_vehicle(&one_step(0.0, 40.0, 0.0)).unwrap();
    let lay = VehicleLayout { t_horizon: 1 };
    let res = bnb(&prob);
    assert_eq!(res.status, MiqpStatus::Optimal);
    let z = res.zeta.unwrap();
    assert!(z[lay.engine_on(0)].abs() < 1e-4);
    assert!(z[lay.p_eng(0)].abs() < 1e-3);
}

#[test]
fn vehicle_empty_battery_needs_engine() {
    let prob = build_hybrid_vehicle(&one_step(1.5, 1.0, 10.0)).unwrap();
    let lay = VehicleLayout { t_horizon: 1 };
    let o = enumerate_miqp(&prob).unwrap();
    assert_eq!(o.status, OracleStatus::Optimal);
    assert_eq!(o.fixing.as_deref(), Some(&[true][..]));
    let res = bnb(&prob);
    assert!(res.zeta.unwrap()[lay.engine_on(0)] > 1.0 - 1e-4);
    assert!(rel_close(res.cost, o.cost, 1e-4));
}

#[test]
fn vehicle_short_horizon_matches_enumeration() {
    let cfg = VehicleConfig::seeded(6, 2);
    let prob = build_hybrid_vehicle(&cfg).unwrap();
    let lay = VehicleLayout { t_horizon: 6 };
    assert_eq!((prob.n(), prob.m(), prob.p(), prob.q_eq()), (31, 36, 6, 7));
    let o = enumerate_miqp(&prob).unwrap();
    let res = bnb(&prob);
    assert_eq!(res.status, MiqpStatus::Optimal);
    assert!(rel_close(res.cost, o.cost, 1e-3));
    // switch slacks are tight at the optimum
    let z = res.zeta.unwrap();
    for t in 0..6 {
        let prev = if t == 0 { 0.0 } else { z[lay.engine_on(t - 1)] };
        let want = (z[lay.engine_on(t)] - prev).max(0.0);
        assert!((z[lay.switch_slack(t)] - want).abs() < 1e-3, "t = {t}");
    }
    let dual = DualData::new(&prob).unwrap();
    let h = heuristic_solve(&prob, &dual, &Tolerances::default(), 1e-4).unwrap();
    if h.status == HeuristicStatus::Feasible {
        assert!(h.v_h >= o.cost - 1e-3 * o.cost.abs().max(1.0));
    }
}

#[test]
fn arx_constant_parameters_need_no_switch() {
    let u = prbs(12, ARX_PRBS_STATE);
    let y = simulate_transport_delay(&u, 100, 0.0, 0);
    let cfg = ArxSegConfig::new(y, u, 0.5);
    let prob = build_arx_segmentation(&cfg).unwrap();
    let res = bnb(&prob);
    assert_eq!(res.status, MiqpStatus::Optimal);
    let z = res.zeta.unwrap();
    for t in 2..=12 {
        for i in 0..3 {
            assert!(z[cfg.omega_index(t, i)] < 1e-4);
        }
    }
    let traj = cfg.parameter_trajectory(&z);
    for th in &traj[1..] {
        assert!((th - &traj[0]).amax() < 1e-4);
    }
}

#[test]
fn arx_small_switch_matches_enumeration() {
    let u = prbs(5, ARX_PRBS_STATE);
    let y = simulate_transport_delay(&u, 4, 0.0, 0);
    let cfg = ArxSegConfig::new(y, u, 0.1);
    let prob = build_arx_segmentation(&cfg).unwrap();
    assert_eq!(prob.p(), 12);
    let o = enumerate_miqp(&prob).unwrap();
    let res = bnb(&prob);
    assert_eq!(res.status, MiqpStatus::Optimal);
    assert!(rel_close(res.cost, o.cost, 1e-4));
}

#[test]
fn arx_dimensions() {
    let u = prbs(41, ARX_PRBS_STATE);
    let y = simulate_transport_delay(&u, 20, 0.1, 1);
    let prob = build_arx_segmentation(&ArxSegConfig::new(y, u, 0.7)).unwrap();
    assert_eq!((prob.n(), prob.m(), prob.p()), (243, 240, 120));
}

#[test]
fn l0_regression_selects_support() {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(6, 3, &[
        1.0, 0.2, 0.0,
        0.0, 1.0, 0.3,
        0.5, 0.0, 1.0,
        1.0, 1.0, 0.0,
        0.0, 0.4, 1.0,
        0.3, 0.0, 0.2,
    ]);
    let truth = DVector::from_vec(vec![0.8, 0.0, -0.6]);
    let b = &a * &truth;
    let prob = build_l0_lagrangian(&a, &b, 0.05, 1.0, 1e-2).unwrap();
    let o = enumerate_miqp(&prob).unwrap();
    assert_eq!(o.fixing.as_deref(), Some(&[true, false, true][..]));
    let res = bnb(&prob);
    assert!(rel_close(res.cost, o.cost, 1e-4));
    let z = res.zeta.unwrap();
    assert!((z[0] - 0.8).abs() < 1e-2 && z[1].abs() < 1e-4 && (z[2] + 0.6).abs() < 1e-2);
}
