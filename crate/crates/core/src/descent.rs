//! Gradient-descent drivers `K_{i+1} = K_i - η∇J(K_i)` and the iteration
//! budgets and local-rate certificate that accompany them.

use serde::{Deserialize, Serialize};

use crate::constants::landscape_constants;
use crate::error::{Result, SofError};
use crate::matrixcore::{spectral_norm, sym_eig_extremes, Mat};
use crate::oracle::dare_optimal_gain;
use crate::policy::NumericPolicy;
use crate::sofcost::{CostPoint, Gain, PlantSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fixed step `η ≤ 1/L(J(K₀))`.
    Certified,
    /// Armijo backtracking with a stabilizability guard.
    Linesearch,
}

/// Step size. In certified mode `Auto` means `1/L` at `α = J(K₀)`; in
/// line-search mode it is the initial trial step `1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepRepr", into = "StepRepr")]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepRepr {
    Auto(AutoTag),
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

impl TryFrom<StepRepr> for StepSize {
    type Error = String;

    fn try_from(repr: StepRepr) -> std::result::Result<Self, String> {
        match repr {
            StepRepr::Auto(_) => Ok(StepSize::Auto),
            StepRepr::Fixed(eta) if eta > 0.0 && eta.is_finite() => Ok(StepSize::Fixed(eta)),
            StepRepr::Fixed(eta) => Err(format!("eta must be positive and finite, got {eta}")),
        }
    }
}

impl From<StepSize> for StepRepr {
    fn from(step: StepSize) -> Self {
        match step {
            StepSize::Auto => StepRepr::Auto(AutoTag::Auto),
            StepSize::Fixed(eta) => StepRepr::Fixed(eta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Armijo {
    pub shrink: f64,
    pub slope: f64,
    pub max_backtracks: usize,
}

impl Default for Armijo {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            slope: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescentConfig {
    pub mode: Mode,
    #[serde(default = "auto")]
    pub eta: StepSize,
    pub epsilon: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub armijo: Armijo,
}

fn auto() -> StepSize {
    StepSize::Auto
}

impl DescentConfig {
    pub fn certified(epsilon: f64, max_iters: usize) -> Self {
        Self {
            mode: Mode::Certified,
            eta: StepSize::Auto,
            epsilon,
            max_iters,
            armijo: Armijo::default(),
        }
    }

    pub fn linesearch(epsilon: f64, max_iters: usize) -> Self {
        Self {
            mode: Mode::Linesearch,
            ..Self::certified(epsilon, max_iters)
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = StepSize::Fixed(eta);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EpsilonReached,
    MaxIters,
    /// A step left the stabilizing set and could not be repaired.
    InstabilityGuard,
    /// Backtracking exhausted without an acceptable step.
    LineSearchStalled,
}

/// One iterate. `eta` is the step taken from this iterate (0 on the last record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub gain: Gain,
    #[serde(rename = "J")]
    pub j: f64,
    pub grad_fro: f64,
    pub rho: f64,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_grad_fro: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub records: Vec<IterRecord>,
    pub status: Termination,
}

impl DescentTrace {
    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("a trace always holds the initial iterate")
    }

    pub fn final_gain(&self) -> &Gain {
        &self.last().gain
    }

    /// Number of steps taken.
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    pub fn costs(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.j)
    }
}

pub(crate) fn record(iter: usize, point: &CostPoint<'_>, grad_fro: f64) -> IterRecord {
    IterRecord {
        iter,
        gain: point.gain().clone(),
        j: point.cost(),
        grad_fro,
        rho: point.bundle().rho,
        eta: 0.0,
        est_j: None,
        est_grad_fro: None,
    }
}

/// Certified step `1/L(α)` with `α = J(K₀)`.
pub fn certified_step(plant: &PlantSpec, k0: &Gain) -> Result<f64> {
    let alpha = CostPoint::with_context(plant, k0, "certified_step: K0")?.cost();
    Ok(landscape_constants(plant, alpha)?.certified_step())
}

#[allow(clippy::large_enum_variant)]
enum Step<'a> {
    Accepted(CostPoint<'a>, f64),
    Stop(Termination),
}

pub fn run_gd(plant: &PlantSpec, k0: &Gain, config: &DescentConfig) -> Result<DescentTrace> {
    if !(config.epsilon >= 0.0) {
        return Err(SofError::Domain(format!("epsilon must be nonnegative, got {}", config.epsilon)));
    }
    let mut point = CostPoint::with_context(plant, k0, "run_gd: K0")?;
    let eta = match (config.mode, config.eta) {
        (Mode::Certified, step) => {
            let limit = landscape_constants(plant, point.cost())?.certified_step();
            match step {
                StepSize::Auto => limit,
                StepSize::Fixed(eta) if eta > limit * (1.0 + 1e-12) => {
                    return Err(SofError::Contract {
                        op: "run_gd",
                        detail: format!("certified mode needs eta <= 1/L = {limit:e}, got {eta:e}"),
                    })
                }
                StepSize::Fixed(eta) => eta,
            }
        }
        (Mode::Linesearch, StepSize::Auto) => 1.0,
        (Mode::Linesearch, StepSize::Fixed(eta)) => eta,
    };
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(SofError::Domain(format!("eta must be positive and finite, got {eta}")));
    }

    let mut records = Vec::new();
    let mut trial = eta;
    for iter in 0.. {
        let grad = point.gradient();
        let grad_fro = grad.norm();
        let mut rec = record(iter, &point, grad_fro);
        if grad_fro <= config.epsilon || iter == config.max_iters {
            records.push(rec);
            let status = if grad_fro <= config.epsilon {
                Termination::EpsilonReached
            } else {
                Termination::MaxIters
            };
            return Ok(DescentTrace { records, status });
        }
        let step = match config.mode {
            Mode::Certified => fixed_step(plant, &point, &grad, eta)?,
            Mode::Linesearch => armijo_step(plant, &point, &grad, trial, &config.armijo)?,
        };
        match step {
            Step::Accepted(next, t) => {
                log::trace!("iter {iter}: J = {:.12e}, |grad| = {grad_fro:.3e}, eta = {t:.3e}", point.cost());
                rec.eta = t;
                records.push(rec);
                point = next;
                trial = 2.0 * t;
            }
            Step::Stop(status) => {
                records.push(rec);
                return Ok(DescentTrace { records, status });
            }
        }
    }
    unreachable!("the iteration counter is unbounded")
}

fn fixed_step<'a>(
    plant: &'a PlantSpec,
    point: &CostPoint<'a>,
    grad: &Mat,
    eta: f64,
) -> Result<Step<'a>> {
    match CostPoint::with_context(plant, &point.gain().offset(grad, -eta), "run_gd") {
        Ok(next) => Ok(Step::Accepted(next, eta)),
        Err(SofError::Instability { rho, .. }) => {
            log::warn!("certified step left the stabilizing set (rho = {rho})");
            Ok(Step::Stop(Termination::InstabilityGuard))
        }
        Err(e) => Err(e),
    }
}

/// Backtracking from `trial`. A candidate is rejected if it leaves the
/// stabilizing set or fails the sufficient-decrease test. When the required
/// decrease is below the rounding level of `J`, the test is replaced by its
/// derivative form `⟨∇J(K - tG), G⟩ ≥ -(1 - 2c)‖G‖²` (with `J` kept within
/// rounding), which is equivalent on quadratics and does not rely on
/// differences of nearly equal costs.
fn armijo_step<'a>(
    plant: &'a PlantSpec,
    point: &CostPoint<'a>,
    grad: &Mat,
    trial: f64,
    armijo: &Armijo,
) -> Result<Step<'a>> {
    let j = point.cost();
    let grad_sq = grad.norm_squared();
    let rounding = 8.0 * f64::EPSILON * j.abs().max(1.0);
    let mut t = trial;
    for _ in 0..=armijo.max_backtracks {
        match CostPoint::with_context(plant, &point.gain().offset(grad, -t), "run_gd") {
            Ok(next) => {
                let j_next = next.cost();
                let decrease = armijo.slope * t * grad_sq;
                let accept = if decrease > rounding {
                    j_next <= j - decrease
                } else {
                    j_next <= j + rounding
                        && next.gradient().dot(grad) >= -(1.0 - 2.0 * armijo.slope) * grad_sq
                };
                if accept {
                    return Ok(Step::Accepted(next, t));
                }
            }
            Err(SofError::Instability { .. }) => {}
            Err(e) => return Err(e),
        }
        t *= armijo.shrink;
    }
    Ok(Step::Stop(Termination::LineSearchStalled))
}

/// `2α/(ηε²)` before rounding up.
pub fn iteration_budget_raw(alpha: f64, eta: f64, epsilon: f64) -> Result<f64> {
    for (name, v) in [("alpha", alpha), ("eta", eta), ("epsilon", epsilon)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(SofError::Domain(format!("{name} must be positive and finite, got {v}")));
        }
    }
    Ok(2.0 * alpha / (eta * epsilon * epsilon))
}

/// `⌈2α/(ηε²)⌉`. Values within `1e-9` relative of an integer are taken as
/// that integer, so representation error cannot add a spurious iteration.
pub fn iteration_budget(alpha: f64, eta: f64, epsilon: f64) -> Result<u64> {
    let raw = iteration_budget_raw(alpha, eta, epsilon)?;
    Ok(ceil_near_integer(raw))
}

fn ceil_near_integer(raw: f64) -> u64 {
    let nearest = raw.round();
    if (raw - nearest).abs() <= 1e-9 * raw.abs().max(1.0) {
        nearest as u64
    } else {
        raw.ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRateBudget {
    /// `‖Σ_{K*}‖ / (2ημ²σ_min(C)²σ_min(R))`.
    pub coefficient: f64,
    /// Per-iteration gap contraction `1 - 1/coefficient`.
    pub contraction: f64,
    /// `coefficient · ln((J₀ - J_s*)/ε_J)`, clamped at 0.
    pub raw: f64,
    pub iterations: u64,
    pub j_star: f64,
}

/// Iterations after which the certified run from cost `J₀` has gap at most `ε_J`.
pub fn linear_rate_budget(plant: &PlantSpec, eta: f64, j0: f64, eps_j: f64) -> Result<LinearRateBudget> {
    let Some(c_min) = plant.invertible_c_sigma_min() else {
        return Err(SofError::Applicability(
            "the linear rate needs a square invertible C".into(),
        ));
    };
    for (name, v) in [("eta", eta), ("J0", j0), ("eps_J", eps_j)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(SofError::Domain(format!("{name} must be positive and finite, got {v}")));
        }
    }
    let limit = landscape_constants(plant, j0)?.certified_step();
    if eta > limit * (1.0 + 1e-12) {
        return Err(SofError::Contract {
            op: "linear_rate_budget",
            detail: format!("eta must not exceed 1/L = {limit:e}, got {eta:e}"),
        });
    }
    let riccati = dare_optimal_gain(plant)?;
    let mu = plant.mu();
    let coefficient = spectral_norm(&riccati.sigma_star)
        / (2.0 * eta * mu * mu * c_min * c_min * plant.sigma_min_r());
    let gap = j0 - riccati.j_s_star;
    let raw = if eps_j >= gap {
        0.0
    } else {
        coefficient * (gap / eps_j).ln()
    };
    Ok(LinearRateBudget {
        coefficient,
        contraction: 1.0 - 1.0 / coefficient,
        raw,
        iterations: ceil_near_integer(raw),
        j_star: riccati.j_s_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalCertificate {
    /// `λ_min(∇²J(K‡))`.
    pub l: f64,
    /// `2l/M(α)`.
    pub r_bar: f64,
    /// `‖K₀ - K‡‖_F`.
    pub r0: f64,
    /// `1/L(α)`.
    pub eta: f64,
    /// `1/(1 + ηl)`.
    pub predicted_factor: f64,
    pub applicable: bool,
}

impl LocalCertificate {
    /// `(r̄r₀/(r̄-r₀))·factor^i`, the predicted bound on `‖K_i - K‡‖_F`.
    pub fn predicted_distance(&self, i: usize) -> Option<f64> {
        self.applicable.then(|| {
            self.r_bar * self.r0 / (self.r_bar - self.r0) * self.predicted_factor.powi(i as i32)
        })
    }
}

/// Local linear-rate certificate around a nondegenerate local minimum `K‡`.
/// Applicability is decided by `r₀ < r̄` alone.
pub fn local_convergence_certificate(
    plant: &PlantSpec,
    k_dagger: &Gain,
    k0: &Gain,
    alpha: f64,
) -> Result<LocalCertificate> {
    let point = CostPoint::with_context(plant, k_dagger, "local_convergence_certificate: K‡")?;
    let gradnorm = point.gradient().norm();
    let tol = NumericPolicy::global().stationary_tol;
    if gradnorm > tol {
        return Err(SofError::Precondition(format!(
            "K‡ is not stationary: |grad|_F = {gradnorm:e} > {tol:e}"
        )));
    }
    let l = sym_eig_extremes(&point.full_hessian()?)?.lambda_min;
    if l <= 0.0 {
        return Err(SofError::Saddle { lambda_min: l });
    }
    let consts = landscape_constants(plant, alpha)?;
    let r_bar = 2.0 * l / consts.hessian_lipschitz;
    let r0 = k0.distance(k_dagger);
    let eta = consts.certified_step();
    Ok(LocalCertificate {
        l,
        r_bar,
        r0,
        eta,
        predicted_factor: 1.0 / (1.0 + eta * l),
        applicable: r0 < r_bar,
    })
}
