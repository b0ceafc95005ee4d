mod common;

use common::*;
use nalgebra::dmatrix;
use proptest::prelude::*;
use sof_core::instances::{random_instance, InstanceSpec};
use sof_core::matrixcore::spectral_radius;
use sof_core::oracle::{
    dare_optimal_gain, dare_residual, dominance_audit, dominance_audit_approximate, rollout_cost, COST_GAP_LOWER,
    COST_GAP_UPPER, GRADIENT_DOMINANCE,
};
use sof_core::{cost, gradient, Gain, Mat, PlantSpec, SofError};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn riccati_solution_is_stationary_for_state_feedback(seed in any::<u64>(), n in 1usize..5, m in 1usize..4) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, &InstanceSpec::state_feedback(n, m)).unwrap();
        let sol = dare_optimal_gain(&inst.plant).unwrap();
        prop_assert!(dare_residual(&inst.plant, &sol.p_star).norm() <= 1e-9 * sol.p_star.norm());
        let k = Gain::new(sol.k_s_star.clone()).unwrap();
        prop_assert!(gradient(&inst.plant, &k).unwrap().norm() <= 1e-8);
        prop_assert!((cost(&inst.plant, &k).unwrap() - sol.j_s_star).abs() <= 1e-10 * sol.j_s_star);
        prop_assert!(sol.rho < 1.0);
    }

    #[test]
    fn dominance_inequalities_hold_for_invertible_output(seed in any::<u64>(), n in 1usize..5, m in 1usize..4) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, &InstanceSpec::invertible_output(n, m)).unwrap();
        let report = dominance_audit(&inst.plant, &inst.k0).unwrap();
        prop_assert!(report.all_pass(), "{:?}", report.checks);
        prop_assert!(report.j >= report.j_star * (1.0 - 1e-12));
    }
}

#[test]
fn riccati_scalar_example() {
    let sol = dare_optimal_gain(&s1()).unwrap();
    assert!((sol.p_star[(0, 0)] - s1_optimal_cost()).abs() < 1e-12);
    assert!((sol.k_s_star[(0, 0)] - s1_optimal_gain()).abs() < 1e-12);
    assert!((sol.p_star[(0, 0)] - 1.132782218537319).abs() < 1e-12);
}

#[test]
fn riccati_decoupled_example() {
    let sol = dare_optimal_gain(&decoupled()).unwrap();
    assert!((&sol.p_star - Mat::identity(2, 2)).norm() < 1e-14);
    assert!(sol.k_s_star.norm() < 1e-14);
}

#[test]
fn dominance_bounds_are_tight_at_the_optimum() {
    let plant = s1();
    let k = Gain::scalar(s1_optimal_gain());
    let report = dominance_audit(&plant, &k).unwrap();
    for name in [COST_GAP_UPPER, GRADIENT_DOMINANCE, COST_GAP_LOWER] {
        let check = report.check(name).unwrap();
        assert!(check.pass, "{name}");
        assert!(check.lhs.abs() < 1e-12 && check.rhs.abs() < 1e-12, "{name}: {check:?}");
    }
}

#[test]
fn dominance_needs_invertible_output() {
    let plant = partially_observed(dmatrix![1.0, 0.0]);
    let k = Gain::zeros(2, 1);
    assert!(matches!(dominance_audit(&plant, &k), Err(SofError::Applicability(_))));
    let report = dominance_audit_approximate(&plant, &k, &k).unwrap();
    assert!(report.approximate && report.all_pass());
}

#[test]
fn rollout_mean_matches_exact_cost() {
    let plant = s1();
    let k = Gain::scalar(0.0);
    let est = rollout_cost(&plant, &k, 200, 100_000, 11).unwrap();
    let exact = cost(&plant, &k).unwrap();
    assert!(((est.mean - exact) / exact).abs() <= 0.01, "{} vs {exact}", est.mean);
    assert!(est.std_error > 0.0 && est.std_error < 0.01);
}

#[test]
fn rollout_truncation_bias_is_small_for_long_horizons() {
    let mut r = rng(4);
    let inst = random_instance(&mut r, &InstanceSpec::new(3, 2, 2).with_radius(0.8, 0.9)).unwrap();
    let rho = spectral_radius(&inst.plant.closed_loop(&inst.k0).unwrap()).unwrap();
    let exact = cost(&inst.plant, &inst.k0).unwrap();
    let est = rollout_cost(&inst.plant, &inst.k0, 400, 10, 1).unwrap();
    assert!(est.bias_estimate <= 1e-3 * exact, "rho {rho}: bias {}", est.bias_estimate);
}

#[test]
fn rollout_seeds_are_reproducible() {
    let plant = s1();
    let k = Gain::scalar(0.1);
    let a = rollout_cost(&plant, &k, 50, 500, 3).unwrap();
    let b = rollout_cost(&plant, &k, 50, 500, 3).unwrap();
    let c = rollout_cost(&plant, &k, 50, 500, 4).unwrap();
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_ne!(a.mean.to_bits(), c.mean.to_bits());
}

#[test]
fn unstabilizable_pair_fails_riccati() {
    let plant = PlantSpec::new(
        dmatrix![1.5, 0.0; 0.0, 0.5],
        dmatrix![0.0; 1.0],
        Mat::identity(2, 2),
        Mat::identity(2, 2),
        dmatrix![1.0],
        Mat::identity(2, 2),
    )
    .unwrap();
    assert!(matches!(dare_optimal_gain(&plant), Err(SofError::Stabilizability(_))));
}
