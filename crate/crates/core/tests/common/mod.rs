#![allow(dead_code)]

use nalgebra::dmatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sof_core::descent::{run_gd, DescentConfig, Termination};
use sof_core::instances::{random_instance, unit_direction, Instance, InstanceSpec};
use sof_core::{Gain, Mat, PlantSpec};

/// `a = 0.5`, `b = c = q = r = x₀ = 1`.
pub fn s1() -> PlantSpec {
    PlantSpec::new(
        dmatrix![0.5],
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![1.0],
    )
    .unwrap()
}

/// Positive root of `p² - p/4 - 1 = 0`, which is both `J*` and `p*` for S1.
pub fn s1_optimal_cost() -> f64 {
    (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0
}

/// `k* = p·a/(1 + p)`.
pub fn s1_optimal_gain() -> f64 {
    let p = s1_optimal_cost();
    0.5 * p / (1.0 + p)
}

/// `A = 0`, `B = C = Q = R = X₀ = I₂`.
pub fn decoupled() -> PlantSpec {
    let i = Mat::identity(2, 2);
    PlantSpec::new(Mat::zeros(2, 2), i.clone(), i.clone(), i.clone(), i.clone(), i).unwrap()
}

/// Two-state plant observed through its first coordinate only.
pub fn partially_observed(c: Mat) -> PlantSpec {
    PlantSpec::new(
        dmatrix![0.9, 0.1; 0.0, 0.8],
        Mat::identity(2, 2),
        c,
        Mat::identity(2, 2),
        Mat::identity(2, 2),
        Mat::identity(2, 2),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `count` instances with dimensions drawn in `1..=max_dim`.
pub fn random_instances(seed: u64, count: usize, max_dim: usize) -> Vec<Instance> {
    let mut rng = rng(seed);
    (0..count)
        .map(|_| {
            let spec = InstanceSpec::random_dims(&mut rng, max_dim);
            random_instance(&mut rng, &spec).unwrap()
        })
        .collect()
}

pub fn instances_from(seed: u64, count: usize, spec: impl Fn(&mut ChaCha8Rng) -> InstanceSpec) -> Vec<Instance> {
    let mut rng = rng(seed);
    (0..count)
        .map(|_| {
            let s = spec(&mut rng);
            random_instance(&mut rng, &s).unwrap()
        })
        .collect()
}

/// A stabilizing gain near `k`, found by shrinking a random offset.
pub fn nearby_stabilizing(plant: &PlantSpec, k: &Gain, scale: f64, rng: &mut ChaCha8Rng) -> Gain {
    let z = unit_direction(rng, plant.m(), plant.d());
    let mut t = scale;
    loop {
        let cand = k.offset(&z, t);
        if sof_core::is_stabilizing(plant, &cand).unwrap() {
            return cand;
        }
        t *= 0.5;
    }
}

/// Line search from `k0` until `‖∇J‖_F ≤ tol`.
pub fn stationary_point(plant: &PlantSpec, k0: &Gain, tol: f64) -> Gain {
    let trace = run_gd(plant, k0, &DescentConfig::linesearch(tol, 1_000_000)).unwrap();
    assert_eq!(trace.status, Termination::EpsilonReached, "|grad| = {}", trace.last().grad_fro);
    trace.final_gain().clone()
}

pub fn relative_error(estimate: &Mat, exact: &Mat) -> f64 {
    (estimate - exact).norm() / exact.norm()
}

/// Column-major `vec(Z)`.
pub fn vec(z: &Mat) -> Mat {
    Mat::from_column_slice(z.len(), 1, z.as_slice())
}

/// Newton iteration on the full Hessian from a line-search estimate; `None`
/// unless it reaches `‖∇J‖_F ≤ tol` with a positive definite Hessian.
pub fn polished_minimum(plant: &PlantSpec, k0: &Gain, tol: f64) -> Option<Gain> {
    let trace = run_gd(plant, k0, &DescentConfig::linesearch(1e-4, 200_000)).ok()?;
    let mut k = trace.final_gain().clone();
    for _ in 0..50 {
        let point = sof_core::CostPoint::new(plant, &k).ok()?;
        let g = point.gradient();
        if g.norm() <= tol {
            let h = point.full_hessian().ok()?;
            return (sof_core::matrixcore::sym_eig_extremes(&h).ok()?.lambda_min > 0.0).then_some(k);
        }
        let h = point.full_hessian().ok()?;
        let step = h.cholesky()?.solve(&vec(&g));
        let step = Mat::from_column_slice(plant.m(), plant.d(), step.as_slice());
        k = k.offset(&step, -1.0);
    }
    None
}
