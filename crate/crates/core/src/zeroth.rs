//! Model-free gradient estimation by two-point sphere smoothing, and the
//! descent loop driven by it.
//!
//! Each sample draws `U` uniform on the Frobenius unit sphere and evaluates
//! the cost at `K ± rU` on the same rollout draw, so the initial-state noise
//! cancels in the difference.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{record, Armijo, DescentTrace, Termination};
use crate::error::{Result, SofError};
use crate::instances::unit_direction;
use crate::matrixcore::{spectral_radius, trace_product, Mat};
use crate::oracle::RolloutSampler;
use crate::policy::NumericPolicy;
use crate::sofcost::{cost, CostPoint, Gain, PlantSpec};

/// Cost estimate `Ĵ(K)` for the randomness indexed by `seed`.
pub trait CostOracle: Sync {
    fn evaluate(&self, k: &Gain, seed: u64) -> Result<f64>;
}

/// Monte Carlo rollout cost over `rollouts` initial states per evaluation.
pub struct RolloutOracle<'a> {
    sampler: RolloutSampler<'a>,
}

impl<'a> RolloutOracle<'a> {
    pub fn new(plant: &'a PlantSpec, horizon: usize, rollouts: usize) -> Result<Self> {
        Ok(Self {
            sampler: RolloutSampler::new(plant, horizon, rollouts)?,
        })
    }
}

impl CostOracle for RolloutOracle<'_> {
    fn evaluate(&self, k: &Gain, seed: u64) -> Result<f64> {
        self.sampler.mean_cost(k, seed)
    }
}

/// The exact infinite-horizon cost; ignores the seed.
pub struct ExactOracle<'a> {
    pub plant: &'a PlantSpec,
}

impl CostOracle for ExactOracle<'_> {
    fn evaluate(&self, k: &Gain, _seed: u64) -> Result<f64> {
        cost(self.plant, k)
    }
}

/// The exact `T`-step cost `Σ_{t<T} Tr(Q_K F^t X₀ F^tᵀ)`; ignores the seed.
pub struct TruncatedOracle<'a> {
    pub plant: &'a PlantSpec,
    pub horizon: usize,
}

impl CostOracle for TruncatedOracle<'_> {
    fn evaluate(&self, k: &Gain, _seed: u64) -> Result<f64> {
        let f = self.plant.closed_loop(k)?;
        let rho = spectral_radius(&f)?;
        if rho >= 1.0 - NumericPolicy::global().stability_margin {
            return Err(SofError::instability("truncated cost", rho));
        }
        let kc = k.matrix() * self.plant.c();
        let stage = self.plant.q() + kc.transpose() * self.plant.r() * &kc;
        let mut moment = self.plant.x0().clone();
        let mut total = 0.0;
        for _ in 0..self.horizon {
            total += trace_product(&stage, &moment);
            moment = &f * moment * f.transpose();
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoStep {
    /// Fixed step, halved while the candidate is unstabilizing or raises `Ĵ`.
    Fixed(f64),
    /// Armijo backtracking on `Ĵ`, starting from 1 and then from twice the last step.
    Armijo(Armijo),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoConfig {
    pub radius: f64,
    pub samples: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub seed: u64,
    #[serde(default = "default_step")]
    pub step: ZoStep,
    /// Initial states averaged per cost evaluation.
    #[serde(default = "one")]
    pub rollouts: usize,
    /// Cap on directions rejected because `K ± rU` left the stabilizing set.
    #[serde(default = "default_redraws")]
    pub max_redraws: usize,
}

fn default_step() -> ZoStep {
    ZoStep::Armijo(Armijo::default())
}

fn default_horizon() -> usize {
    400
}

fn one() -> usize {
    1
}

fn default_redraws() -> usize {
    100
}

impl ZoConfig {
    pub fn new(radius: f64, samples: usize, horizon: usize, seed: u64) -> Self {
        Self {
            radius,
            samples,
            horizon,
            seed,
            step: default_step(),
            rollouts: 1,
            max_redraws: default_redraws(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(SofError::Domain(format!("smoothing radius must be positive, got {}", self.radius)));
        }
        if self.samples == 0 || self.horizon == 0 || self.rollouts == 0 {
            return Err(SofError::Domain("samples, horizon and rollouts must be >= 1".into()));
        }
        Ok(())
    }
}

/// `ρ^{2T}/(1-ρ²) > 1e-6·J`: the truncation bias is not negligible.
pub fn truncation_bias_warning(rho: f64, horizon: usize, j: f64) -> bool {
    rho.powi(2 * horizon as i32) / (1.0 - rho * rho) > 1e-6 * j
}

/// `(m·d/(2rN)) Σ (Ĵ(K+rUᵢ) - Ĵ(K-rUᵢ)) Uᵢ` with rollout costs.
pub fn zo_gradient_estimate(plant: &PlantSpec, k: &Gain, cfg: &ZoConfig) -> Result<Mat> {
    cfg.validate()?;
    let oracle = RolloutOracle::new(plant, cfg.horizon, cfg.rollouts)?;
    zo_gradient_estimate_with(&oracle, plant, k, cfg)
}

/// The two-point estimator over an arbitrary cost oracle.
pub fn zo_gradient_estimate_with<O: CostOracle>(
    oracle: &O,
    plant: &PlantSpec,
    k: &Gain,
    cfg: &ZoConfig,
) -> Result<Mat> {
    estimate(oracle, plant, k, cfg, false)
}

/// Sample `i` uses ChaCha stream `i` of `cfg.seed`; the sum is reduced in
/// index order, so the result does not depend on thread scheduling.
fn estimate<O: CostOracle>(
    oracle: &O,
    plant: &PlantSpec,
    k: &Gain,
    cfg: &ZoConfig,
    swap: bool,
) -> Result<Mat> {
    cfg.validate()?;
    CostPoint::with_context(plant, k, "zo_gradient_estimate")?;
    let (m, d) = (plant.m(), plant.d());
    let r = cfg.radius;
    let terms = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut rejected = 0;
            loop {
                let u = unit_direction(&mut rng, m, d);
                let seed = rng.next_u64();
                let (first, second) = if swap { (-r, r) } else { (r, -r) };
                let plus = oracle.evaluate(&k.offset(&u, first), seed);
                let minus = oracle.evaluate(&k.offset(&u, second), seed);
                match (plus, minus) {
                    (Ok(p), Ok(q)) => return Ok(u * (p - q)),
                    (Err(SofError::Instability { .. }), _) | (_, Err(SofError::Instability { .. })) => {
                        rejected += 1;
                        if rejected > cfg.max_redraws {
                            return Err(SofError::RadiusTooLarge { rejected });
                        }
                    }
                    (Err(e), _) | (_, Err(e)) => return Err(e),
                }
            }
        })
        .collect::<Result<Vec<Mat>>>()?;
    let mut sum = Mat::zeros(m, d);
    for t in &terms {
        sum += t;
    }
    Ok(sum * ((m * d) as f64 / (2.0 * r * cfg.samples as f64)))
}

/// Descent on rollout-estimated gradients. Stops when the estimated gradient
/// norm drops to `epsilon`; the exact `J`, `‖∇J‖_F` and `ρ` are recorded for
/// diagnostics only.
pub fn run_zo_gd(
    plant: &PlantSpec,
    k0: &Gain,
    cfg: &ZoConfig,
    epsilon: f64,
    max_iters: usize,
) -> Result<DescentTrace> {
    cfg.validate()?;
    let oracle = RolloutOracle::new(plant, cfg.horizon, cfg.rollouts)?;
    run_zo_gd_with(&oracle, plant, k0, cfg, epsilon, max_iters)
}

pub fn run_zo_gd_with<O: CostOracle>(
    oracle: &O,
    plant: &PlantSpec,
    k0: &Gain,
    cfg: &ZoConfig,
    epsilon: f64,
    max_iters: usize,
) -> Result<DescentTrace> {
    cfg.validate()?;
    let mut point = CostPoint::with_context(plant, k0, "run_zo_gd: K0")?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut trial = match cfg.step {
        ZoStep::Fixed(eta) => eta,
        ZoStep::Armijo(_) => 1.0,
    };
    let mut warned = false;
    for iter in 0.. {
        let iter_seed: u64 = master.random();
        let iter_cfg = ZoConfig {
            seed: iter_seed,
            ..*cfg
        };
        let rho = point.bundle().rho;
        if !warned && truncation_bias_warning(rho, cfg.horizon, point.cost()) {
            log::warn!("horizon {} leaves a truncation bias above 1e-6 J at rho = {rho:.6}", cfg.horizon);
            warned = true;
        }
        let est_j = oracle.evaluate(point.gain(), iter_seed)?;
        let g_hat = estimate(oracle, plant, point.gain(), &iter_cfg, false)?;
        let est_norm = g_hat.norm();
        let mut rec = record(iter, &point, point.gradient().norm());
        rec.est_j = Some(est_j);
        rec.est_grad_fro = Some(est_norm);
        if est_norm <= epsilon || iter == max_iters {
            records.push(rec);
            let status = if est_norm <= epsilon {
                Termination::EpsilonReached
            } else {
                Termination::MaxIters
            };
            return Ok(DescentTrace { records, status });
        }

        let (shrink, slope, max_backtracks) = match cfg.step {
            ZoStep::Fixed(_) => (0.5, 0.0, Armijo::default().max_backtracks),
            ZoStep::Armijo(a) => (a.shrink, a.slope, a.max_backtracks),
        };
        let mut t = trial;
        let mut accepted = None;
        for _ in 0..=max_backtracks {
            let candidate = point.gain().offset(&g_hat, -t);
            let est_next = match oracle.evaluate(&candidate, iter_seed) {
                Ok(v) => v,
                Err(SofError::Instability { .. }) => {
                    t *= shrink;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if est_next <= est_j - slope * t * est_norm * est_norm {
                match CostPoint::with_context(plant, &candidate, "run_zo_gd") {
                    Ok(next) => {
                        accepted = Some(next);
                        break;
                    }
                    Err(SofError::Instability { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            t *= shrink;
        }
        let Some(next) = accepted else {
            records.push(rec);
            return Ok(DescentTrace {
                records,
                status: Termination::LineSearchStalled,
            });
        };
        rec.eta = t;
        records.push(rec);
        point = next;
        trial = match cfg.step {
            ZoStep::Fixed(eta) => eta,
            ZoStep::Armijo(_) => 2.0 * t,
        };
    }
    unreachable!("the iteration counter is unbounded")
}
