use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};
use sof_core::constants::{bound_audit, landscape_constants};
use sof_core::descent::{certified_step, iteration_budget, linear_rate_budget, run_gd, DescentConfig, Mode};
use sof_core::instances::{random_instance, unit_direction, Instance, InstanceSpec};
use sof_core::landscape::{
    classify_stationary, scan_region, stationary_shift_experiment_with, ScanAxis, ScanGrid,
};
use sof_core::matrixcore::spectral_radius;
use sof_core::oracle::{dare_optimal_gain, dare_residual, dominance_audit, dominance_audit_approximate, fd_gradient, fd_hessian_quadratic};
use sof_core::zeroth::{run_zo_gd, ZoConfig};
use sof_core::{CostPoint, DescentTrace, Gain, PlantSpec};

use crate::config::{gain, matrix, rows, Command, Rows, RunConfig};
use crate::error::{CliError, NumericContext, Result};
use crate::export;

/// A file produced by a command, named relative to the output directory.
pub enum Artifact {
    Trace(DescentTrace),
    Scan(String),
}

pub struct Outcome {
    pub results: Value,
    pub pass: bool,
    pub artifacts: Vec<Artifact>,
}

impl Outcome {
    fn report(results: Value, pass: bool) -> Self {
        Self {
            results,
            pass,
            artifacts: Vec::new(),
        }
    }
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.command {
        Command::Validate => validate(cfg),
        Command::GradCheck => grad_check(cfg),
        Command::HessCheck => hess_check(cfg),
        Command::Constants => constants(cfg),
        Command::Descend => descend(cfg),
        Command::Budget => budget(cfg),
        Command::Dare => dare(cfg),
        Command::Dominance => dominance(cfg),
        Command::ZoDescend => zo_descend(cfg),
        Command::Scan => scan(cfg),
        Command::Prop1 => prop1(cfg),
        Command::Classify => classify(cfg),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PointParams {
    #[serde(rename = "K")]
    k: Option<Rows>,
}

fn validate(cfg: &RunConfig) -> Result<Outcome> {
    let plant = cfg.plant()?;
    let params: PointParams = cfg.params()?;
    let mut results = json!({
        "n": plant.n(),
        "m": plant.m(),
        "d": plant.d(),
        "mu": plant.mu(),
        "sigma_min_Q": plant.sigma_min_q(),
        "sigma_min_R": plant.sigma_min_r(),
        "C_invertible": plant.invertible_c_sigma_min().is_some(),
    });
    let mut pass = true;
    if let Some(k) = &params.k {
        let k = gain("params.K", k, &plant)?;
        let rho = spectral_radius(&plant.closed_loop(&k).during("validate")?).during("validate")?;
        let stabilizing = sof_core::is_stabilizing(&plant, &k).during("validate")?;
        let j = if stabilizing {
            Some(sof_core::cost(&plant, &k).during("validate")?)
        } else {
            None
        };
        results["K"] = json!({ "rho": rho, "stabilizing": stabilizing, "J": j });
        pass = stabilizing;
    }
    Ok(Outcome::report(results, pass))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomSet {
    seed: u64,
    count: usize,
    #[serde(default = "default_max_dim")]
    max_dim: usize,
}

fn default_max_dim() -> usize {
    5
}

/// The `(plant, K)` pairs to check: seeded random instances, or the
/// configured plant at `params.K`.
fn check_cases(cfg: &RunConfig, k: &Option<Rows>, random: &Option<RandomSet>) -> Result<Vec<Instance>> {
    match (random, k) {
        (Some(set), None) => {
            if set.count == 0 || set.max_dim == 0 {
                return Err(CliError::field("params.random", "count and max_dim must be >= 1"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(set.seed);
            (0..set.count)
                .map(|_| {
                    let spec = InstanceSpec::random_dims(&mut rng, set.max_dim);
                    random_instance(&mut rng, &spec).during("random_instance")
                })
                .collect()
        }
        (None, Some(k)) => {
            let plant = cfg.plant()?;
            let k0 = gain("params.K", k, &plant)?;
            Ok(vec![Instance { plant, k0 }])
        }
        _ => Err(CliError::field("params", "give exactly one of `K` (with a plant) or `random`")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GradCheckParams {
    #[serde(rename = "K")]
    k: Option<Rows>,
    random: Option<RandomSet>,
    #[serde(default = "default_grad_h")]
    h: f64,
    #[serde(default = "default_grad_tol")]
    tol: f64,
}

fn default_grad_h() -> f64 {
    1e-5
}

fn default_grad_tol() -> f64 {
    1e-5
}

fn grad_check(cfg: &RunConfig) -> Result<Outcome> {
    let params: GradCheckParams = cfg.params()?;
    let cases = check_cases(cfg, &params.k, &params.random)?;
    let errors = cases
        .par_iter()
        .map(|inst| {
            let analytic = CostPoint::new(&inst.plant, &inst.k0)?.gradient();
            let fd = fd_gradient(&inst.plant, &inst.k0, params.h)?;
            Ok((&fd - &analytic).norm() / analytic.norm())
        })
        .collect::<sof_core::Result<Vec<f64>>>()
        .during("grad-check")?;
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let cases: Vec<Value> = cases
        .iter()
        .zip(&errors)
        .enumerate()
        .map(|(i, (inst, e))| {
            json!({ "index": i, "n": inst.plant.n(), "m": inst.plant.m(), "d": inst.plant.d(), "rel_error": e })
        })
        .collect();
    Ok(Outcome::report(
        json!({ "cases": cases, "max_rel_error": worst, "tol": params.tol, "h": params.h }),
        worst <= params.tol,
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HessCheckParams {
    #[serde(rename = "K")]
    k: Option<Rows>,
    random: Option<RandomSet>,
    /// Seed for the random test directions.
    seed: u64,
    #[serde(default = "default_directions")]
    directions: usize,
    #[serde(default = "default_hess_h")]
    h: f64,
    #[serde(default = "default_hess_tol")]
    tol: f64,
    #[serde(default = "default_dense_tol")]
    dense_tol: f64,
}

fn default_directions() -> usize {
    20
}

fn default_hess_h() -> f64 {
    1e-4
}

fn default_hess_tol() -> f64 {
    1e-4
}

fn default_dense_tol() -> f64 {
    1e-8
}

fn hess_check(cfg: &RunConfig) -> Result<Outcome> {
    let params: HessCheckParams = cfg.params()?;
    if params.directions == 0 {
        return Err(CliError::field("params.directions", "must be >= 1"));
    }
    let cases = check_cases(cfg, &params.k, &params.random)?;
    let errors = cases
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64);
            let (p, k) = (&inst.plant, &inst.k0);
            let point = CostPoint::new(p, k)?;
            let h = point.full_hessian()?;
            let (mut fd_err, mut dense_err): (f64, f64) = (0.0, 0.0);
            for _ in 0..params.directions {
                let z = unit_direction(&mut rng, p.m(), p.d());
                let exact = point.hessian_quadratic(&z)?;
                let fd = fd_hessian_quadratic(p, k, &z, params.h)?;
                fd_err = fd_err.max((fd - exact).abs() / exact.abs());
                let v = sof_core::Mat::from_column_slice(z.len(), 1, z.as_slice());
                let dense = (v.transpose() * &h * &v)[(0, 0)];
                dense_err = dense_err.max((dense - exact).abs() / exact.abs());
            }
            Ok((fd_err, dense_err))
        })
        .collect::<sof_core::Result<Vec<(f64, f64)>>>()
        .during("hess-check")?;
    let worst_fd = errors.iter().map(|e| e.0).fold(0.0, f64::max);
    let worst_dense = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let cases: Vec<Value> = errors
        .iter()
        .enumerate()
        .map(|(i, (fd, dense))| json!({ "index": i, "fd_rel_error": fd, "dense_rel_error": dense }))
        .collect();
    Ok(Outcome::report(
        json!({
            "cases": cases,
            "max_fd_rel_error": worst_fd,
            "max_dense_rel_error": worst_dense,
            "tol": params.tol,
            "dense_tol": params.dense_tol,
        }),
        worst_fd <= params.tol && worst_dense <= params.dense_tol,
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsParams {
    alpha: Option<f64>,
    #[serde(rename = "K")]
    k: Option<Rows>,
}

fn constants(cfg: &RunConfig) -> Result<Outcome> {
    let plant = cfg.plant()?;
    let params: ConstantsParams = cfg.params()?;
    let k = params.k.as_ref().map(|k| gain("params.K", k, &plant)).transpose()?;
    let alpha = match (params.alpha, &k) {
        (Some(a), _) => a,
        (None, Some(k)) => sof_core::cost(&plant, k).during("constants")?,
        (None, None) => return Err(CliError::field("params", "give `alpha`, `K`, or both")),
    };
    let consts = landscape_constants(&plant, alpha).during("constants")?;
    let mut results = json!({ "constants": consts, "certified_step": consts.certified_step() });
    let mut pass = true;
    if let Some(k) = &k {
        let audit = bound_audit(&plant, k, alpha).during("constants")?;
        pass = audit.all_pass();
        results["audit"] = serde_json::to_value(&audit).expect("audit serializes");
    }
    Ok(Outcome::report(results, pass))
}

fn descent_summary(trace: &DescentTrace) -> Value {
    let last = trace.last();
    json!({
        "status": trace.status,
        "iterations": trace.iterations(),
        "J": last.j,
        "grad_fro": last.grad_fro,
        "rho": last.rho,
        "K": rows(last.gain.matrix()),
    })
}

fn start_gain(cfg: &RunConfig, plant: &PlantSpec) -> Result<Gain> {
    let rows: Rows = match cfg.params.get("K0") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::field("params.K0", e.to_string()))?,
        None => return Err(CliError::field("params.K0", "missing initial gain")),
    };
    gain("params.K0", &rows, plant)
}

fn descend(cfg: &RunConfig) -> Result<Outcome> {
    let plant = cfg.plant()?;
    let k0 = start_gain(cfg, &plant)?;
    let config: DescentConfig = serde_json::from_value(cfg.params_without(&["K0"]))
        .map_err(|e| CliError::field("params", e.to_string()))?;
    let trace = run_gd(&plant, &k0, &config).during("descend")?;
    log::info!("descend: {:?} after {} iterations", trace.status, trace.iterations());
    let mut results = descent_summary(&trace);
    if config.mode == Mode::Certified {
        let j0 = trace.records[0].j;
        let eta = trace.records[0].eta;
        if eta > 0.0 {
            results["budget"] = json!(iteration_budget(j0, eta, config.epsilon).during("descend")?);
        }
    }
    let pass = trace.status == sof_core::Termination::EpsilonReached;
    Ok(Outcome {
        results,
        pass,
        artifacts: vec![Artifact::Trace(trace)],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BudgetParams {
    alpha: Option<f64>,
    eta: Option<f64>,
    epsilon: f64,
    #[serde(rename = "K0")]
    k0: Option<Rows>,
    /// Target cost gap for the linear-rate budget.
    #[serde(rename = "eps_J")]
    eps_j: Option<f64>,
}

fn budget(cfg: &RunConfig) -> Result<Outcome> {
    let params: BudgetParams = cfg.params()?;
    let plant = match (&cfg.plant, &params.k0, params.eps_j) {
        (None, None, None) => None,
        _ => Some(cfg.plant()?),
    };
    let k0 = match (&plant, &params.k0) {
        (Some(p), Some(k)) => Some(gain("params.K0", k, p)?),
        _ => None,
    };
    let alpha = match (params.alpha, &plant, &k0) {
        (Some(a), ..) => a,
        (None, Some(p), Some(k)) => sof_core::cost(p, k).during("budget")?,
        _ => return Err(CliError::field("params.alpha", "missing; give `alpha` or a plant with `K0`")),
    };
    let eta = match (params.eta, &plant, &k0) {
        (Some(e), ..) => e,
        (None, Some(p), Some(k)) => certified_step(p, k).during("budget")?,
        _ => return Err(CliError::field("params.eta", "missing; give `eta` or a plant with `K0`")),
    };
    let iterations = iteration_budget(alpha, eta, params.epsilon).during("budget")?;
    let mut results = json!({ "alpha": alpha, "eta": eta, "epsilon": params.epsilon, "iterations": iterations });
    if let Some(eps_j) = params.eps_j {
        let plant = plant.as_ref().expect("plant is loaded when eps_J is set");
        let linear = linear_rate_budget(plant, eta, alpha, eps_j).during("budget")?;
        results["linear_rate"] = serde_json::to_value(linear).expect("budget serializes");
    }
    Ok(Outcome::report(results, true))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DareParams {
    #[serde(default = "default_dare_residual")]
    residual_tol: f64,
}

fn default_dare_residual() -> f64 {
    1e-9
}

fn dare(cfg: &RunConfig) -> Result<Outcome> {
    let plant = cfg.plant()?;
    let params: DareParams = cfg.params()?;
    let sol = dare_optimal_gain(&plant).during("dare")?;
    let residual = dare_residual(&plant, &sol.p_star).norm() / sol.p_star.norm();
    Ok(Outcome::report(
        json!({
            "P_star": rows(&sol.p_star),
            "K_s_star": rows(&sol.k_s_star),
            "J_s_star": sol.j_s_star,
            "rho": sol.rho,
            "sweeps": sol.sweeps,
            "relative_residual": residual,
        }),
        residual <= params.residual_tol,
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DominanceParams {
    #[serde(rename = "K")]
    k: Rows,
    /// Best known output-feedback gain, used when `C` is not invertible.
    reference: Option<Rows>,
}

fn dominance(cfg: &RunConfig) -> Result<Outcome> {
    let plant = cfg.plant()?;
    let params: DominanceParams = cfg.params()?;
    let k = gain("params.K", &params.k, &plant)?;
    let report = match &params.reference {
        Some(r) => dominance_audit_approximate(&plant, &k, &gain("params.reference", r, &plant)?),
        None => dominance_audit(&plant, &k),
    }
    .during("dominance")?;
    let pass = report.all_pass();
    Ok(Outcome::report(serde_json::to_value(&report).expect("report serializes"), pass))
}

fn zo_descend(cfg: &RunConfig) -> Result<Outcome> {
    #[derive(Deserialize)]
    struct Stop {
        epsilon: f64,
        max_iters: usize,
    }
    let plant = cfg.plant()?;
    let k0 = start_gain(cfg, &plant)?;
    let pick = |key: &str| cfg.params.get(key).cloned().unwrap_or(Value::Null);
    let stop: Stop = serde_json::from_value(json!({ "epsilon": pick("epsilon"), "max_iters": pick("max_iters") }))
        .map_err(|e| CliError::field("params", format!("epsilon and max_iters: {e}")))?;
    let zo: ZoConfig = serde_json::from_value(cfg.params_without(&["K0", "epsilon", "max_iters"]))
        .map_err(|e| CliError::field("params", e.to_string()))?;
    let trace = run_zo_gd(&plant, &k0, &zo, stop.epsilon, stop.max_iters).during("zo-descend")?;
    log::info!("zo-descend: {:?} after {} iterations", trace.status, trace.iterations());
    let mut results = descent_summary(&trace);
    results["est_J"] = json!(trace.last().est_j);
    results["est_gradnorm"] = json!(trace.last().est_grad_fro);
    let pass = trace.status == sof_core::Termination::EpsilonReached;
    Ok(Outcome {
        results,
        pass,
        artifacts: vec![Artifact::Trace(trace)],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanParams {
    axes: Vec<ScanAxis>,
    origin: Option<Rows>,
    directions: Option<Vec<Rows>>,
    blowup_factor: Option<f64>,
}

fn scan(cfg: &RunConfig) -> Result<Outcome> {
    let plant = cfg.plant()?;
    let params: ScanParams = cfg.params()?;
    let grid = match (&params.origin, &params.directions) {
        (None, None) => ScanGrid::coordinates(&plant, params.axes.clone()),
        (Some(origin), Some(dirs)) => {
            let dirs = dirs
                .iter()
                .enumerate()
                .map(|(i, d)| matrix(&format!("params.directions[{i}]"), d))
                .collect::<Result<Vec<_>>>()?;
            ScanGrid::slice(matrix("params.origin", origin)?, dirs, params.axes.clone())
        }
        _ => return Err(CliError::field("params", "`origin` and `directions` go together")),
    }
    .during("scan")?;
    let report = scan_region(&plant, &grid).during("scan")?;
    let pass = params.blowup_factor.map_or(true, |f| report.boundary_blowup(f));
    let csv = export::scan_csv(&report);
    Ok(Outcome {
        results: json!({
            "shape": report.shape,
            "stabilizing_cells": report.cells.iter().filter(|c| c.stabilizing).count(),
            "components": report.components,
            "blowup_factor": params.blowup_factor,
        }),
        pass,
        artifacts: vec![Artifact::Scan(csv)],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Prop1Params {
    #[serde(rename = "K0")]
    k0: Rows,
    #[serde(rename = "X0_a")]
    x0_a: Option<Rows>,
    #[serde(rename = "X0_b")]
    x0_b: Rows,
    #[serde(default = "default_prop1_eps")]
    epsilon: f64,
    #[serde(default = "default_prop1_iters")]
    max_iters: usize,
    /// When set, `pass` requires the observed shift to agree.
    expect_shift: Option<bool>,
}

fn default_prop1_eps() -> f64 {
    1e-10
}

fn default_prop1_iters() -> usize {
    200_000
}

fn prop1(cfg: &RunConfig) -> Result<Outcome> {
    let plant = cfg.plant()?;
    let params: Prop1Params = cfg.params()?;
    let k0 = gain("params.K0", &params.k0, &plant)?;
    let x0_a = match &params.x0_a {
        Some(r) => matrix("params.X0_a", r)?,
        None => plant.x0().clone(),
    };
    let x0_b = matrix("params.X0_b", &params.x0_b)?;
    let config = DescentConfig::linesearch(params.epsilon, params.max_iters);
    let report = stationary_shift_experiment_with(&plant, &x0_a, &x0_b, &k0, &config).during("prop1")?;
    let shifted = report.shifted();
    let mut results = serde_json::to_value(&report).expect("report serializes");
    results["shifted"] = json!(shifted);
    Ok(Outcome::report(results, params.expect_shift.map_or(true, |e| e == shifted)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyParams {
    #[serde(rename = "K")]
    k: Rows,
    #[serde(default = "default_grad_tol_classify")]
    grad_tol: f64,
    degen_tol: Option<f64>,
}

fn default_grad_tol_classify() -> f64 {
    1e-8
}

fn classify(cfg: &RunConfig) -> Result<Outcome> {
    let plant = cfg.plant()?;
    let params: ClassifyParams = cfg.params()?;
    let k = gain("params.K", &params.k, &plant)?;
    let report = classify_stationary(&plant, &k, params.grad_tol, params.degen_tol).during("classify")?;
    Ok(Outcome::report(serde_json::to_value(&report).expect("report serializes"), true))
}
