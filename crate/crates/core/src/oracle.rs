//! Independent ground truth: finite differences, the state-feedback Riccati
//! optimum, Monte Carlo rollout costs and the gradient-dominance audit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{all_pass, AuditEntry};
use crate::error::{Result, SofError};
use crate::instances::gaussian;
use crate::matrixcore::{
    psd_sqrt_factor, spectral_norm, spectral_radius, symmetrize, trace_product, LyapunovSolver, Mat,
};
use crate::policy::NumericPolicy;
use crate::sofcost::{cost, CostPoint, Gain, PlantSpec};

pub const DEFAULT_GRADIENT_STEP: f64 = 1e-5;
pub const DEFAULT_HESSIAN_STEP: f64 = 1e-4;
const MAX_STEP_HALVINGS: usize = 10;

fn halving_steps(h: f64) -> impl Iterator<Item = f64> {
    (0..=MAX_STEP_HALVINGS).map(move |i| h / f64::from(1u32 << i))
}

fn is_instability(e: &SofError) -> bool {
    matches!(e, SofError::Instability { .. })
}

/// Central-difference gradient. The step is halved while a perturbed gain
/// leaves the stabilizing set.
pub fn fd_gradient(plant: &PlantSpec, k: &Gain, h: f64) -> Result<Mat> {
    if !(h > 0.0) {
        return Err(SofError::Domain(format!("finite-difference step must be positive, got {h}")));
    }
    cost(plant, k)?;
    let (m, d) = (plant.m(), plant.d());
    'step: for step in halving_steps(h) {
        let mut g = Mat::zeros(m, d);
        for j in 0..d {
            for i in 0..m {
                let mut e = Mat::zeros(m, d);
                e[(i, j)] = 1.0;
                let plus = cost(plant, &k.offset(&e, step));
                let minus = cost(plant, &k.offset(&e, -step));
                match (plus, minus) {
                    (Ok(p), Ok(q)) => g[(i, j)] = (p - q) / (2.0 * step),
                    (Err(e), _) | (_, Err(e)) if is_instability(&e) => continue 'step,
                    (Err(e), _) | (_, Err(e)) => return Err(e),
                }
            }
        }
        return Ok(g);
    }
    Err(SofError::instability(
        format!("fd_gradient: perturbation of size {h:e} leaves the stabilizing set; use a smaller h"),
        f64::NAN,
    ))
}

/// `(J(K+hZ) - 2J(K) + J(K-hZ)) / h²`.
pub fn fd_hessian_quadratic(plant: &PlantSpec, k: &Gain, z: &Mat, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(SofError::Domain(format!("finite-difference step must be positive, got {h}")));
    }
    let center = cost(plant, k)?;
    for step in halving_steps(h) {
        let plus = cost(plant, &k.offset(z, step));
        let minus = cost(plant, &k.offset(z, -step));
        match (plus, minus) {
            (Ok(p), Ok(q)) => return Ok((p - 2.0 * center + q) / (step * step)),
            (Err(e), _) | (_, Err(e)) if is_instability(&e) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Err(SofError::instability(
        format!("fd_hessian_quadratic: segment of size {h:e} leaves the stabilizing set; use a smaller h"),
        f64::NAN,
    ))
}

/// Optimal state-feedback LQR solution for the plant's `(A, B, Q, R, X₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p_star: Mat,
    /// Optimal state-feedback gain `K_s*`, `u = -K_s* x`.
    pub k_s_star: Mat,
    /// `J_s* = Tr(P* X₀)`.
    pub j_s_star: f64,
    /// State correlation of the optimal closed loop `A - BK_s*`.
    pub sigma_star: Mat,
    pub rho: f64,
    pub sweeps: usize,
}

/// `P - Q - AᵀPA + AᵀPB(R+BᵀPB)⁻¹BᵀPA`; NaN if `R + BᵀPB` is not positive definite.
pub fn dare_residual(plant: &PlantSpec, p: &Mat) -> Mat {
    let (a, b) = (plant.a(), plant.b());
    let s = plant.r() + b.transpose() * p * b;
    match s.cholesky() {
        Some(chol) => {
            let gain = chol.solve(&(b.transpose() * p * a));
            p - plant.q() - a.transpose() * p * a + a.transpose() * p * b * gain
        }
        None => Mat::from_element(p.nrows(), p.ncols(), f64::NAN),
    }
}

/// Riccati value iteration `P ← Q + AᵀPA - AᵀPB(R+BᵀPB)⁻¹BᵀPA` from `P = Q`.
pub fn dare_optimal_gain(plant: &PlantSpec) -> Result<RiccatiSolution> {
    let policy = NumericPolicy::global();
    let (a, b, q, r) = (plant.a(), plant.b(), plant.q(), plant.r());
    let solve_gain = |p: &Mat| -> Result<Mat> {
        let s = r + b.transpose() * p * b;
        s.cholesky()
            .map(|chol| chol.solve(&(b.transpose() * p * a)))
            .ok_or_else(|| SofError::numerical("dare_optimal_gain", "R + BᵀPB is not positive definite"))
    };
    let mut p = q.clone();
    let mut sweeps = 0;
    loop {
        if sweeps >= policy.dare_max_sweeps {
            return Err(SofError::Stabilizability(format!(
                "no convergence after {sweeps} sweeps; (A, B) may not be stabilizable"
            )));
        }
        sweeps += 1;
        let k = solve_gain(&p)?;
        let next = symmetrize(&(q + a.transpose() * &p * a - a.transpose() * &p * b * &k));
        let change = (&next - &p).norm();
        p = next;
        let scale = p.norm();
        if !scale.is_finite() || scale > 1e14 {
            return Err(SofError::Stabilizability(format!(
                "value iterate diverged (|P|_F = {scale:.3e} after {sweeps} sweeps)"
            )));
        }
        if change <= policy.dare_tol * scale.max(1.0) {
            break;
        }
    }
    let k_s_star = solve_gain(&p)?;
    let residual = dare_residual(plant, &p).norm();
    if residual > policy.dare_residual * p.norm().max(1.0) {
        return Err(SofError::numerical(
            "dare_optimal_gain",
            format!("Riccati residual {residual:.3e} too large"),
        ));
    }
    let closed = a - b * &k_s_star;
    let rho = spectral_radius(&closed)?;
    if rho >= 1.0 {
        return Err(SofError::Stabilizability(format!(
            "Riccati gain does not stabilize (rho = {rho:.6})"
        )));
    }
    let sigma_star = LyapunovSolver::new(closed.transpose())?.solve(plant.x0())?;
    Ok(RiccatiSolution {
        j_s_star: trace_product(&p, plant.x0()),
        p_star: p,
        k_s_star,
        sigma_star,
        rho,
        sweeps,
    })
}

/// Names of the gradient-dominance checks, in report order.
pub const COST_GAP_UPPER: &str = "cost_gap_le_gain_error_bound";
pub const GRADIENT_DOMINANCE: &str = "cost_gap_le_gradient_dominance_bound";
pub const COST_GAP_LOWER: &str = "gain_error_lower_bound_le_cost_gap";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    /// True when the reference optimum came from descent rather than the Riccati oracle.
    pub approximate: bool,
    pub j: f64,
    /// Reference optimal cost (`J_s*`, or `J` at the supplied reference gain).
    pub j_star: f64,
    pub sigma_star_norm: f64,
    pub checks: Vec<AuditEntry>,
}

impl DominanceReport {
    pub fn all_pass(&self) -> bool {
        all_pass(&self.checks)
    }

    pub fn check(&self, name: &str) -> Option<&AuditEntry> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Audits the three gradient-dominance inequalities against the Riccati
/// optimum. Requires `C` square and invertible.
pub fn dominance_audit(plant: &PlantSpec, k: &Gain) -> Result<DominanceReport> {
    let Some(c_min) = plant.invertible_c_sigma_min() else {
        return Err(SofError::Applicability(
            "gradient dominance needs a square invertible C; use dominance_audit_approximate".into(),
        ));
    };
    let point = CostPoint::new(plant, k)?;
    let riccati = dare_optimal_gain(plant)?;
    let bundle = point.bundle();
    let gap = bundle.j - riccati.j_s_star;
    let sigma_norm = spectral_norm(&riccati.sigma_star);
    let e_sq = bundle.e.norm_squared();
    let grad_sq = point.gradient().norm_squared();
    let (mu, r_min) = (plant.mu(), plant.sigma_min_r());
    let scale = bundle.j;
    let checks = vec![
        AuditEntry::le(COST_GAP_UPPER, gap, sigma_norm * e_sq / r_min, scale),
        AuditEntry::le(
            GRADIENT_DOMINANCE,
            gap,
            sigma_norm * grad_sq / (4.0 * mu * mu * c_min * c_min * r_min),
            scale,
        ),
        AuditEntry::le(
            COST_GAP_LOWER,
            mu * e_sq / spectral_norm(point.curvature()),
            gap,
            scale,
        ),
    ];
    Ok(DominanceReport {
        approximate: false,
        j: bundle.j,
        j_star: riccati.j_s_star,
        sigma_star_norm: sigma_norm,
        checks,
    })
}

/// Evaluates only the gain-error upper bound for a general `C`, using
/// `reference` (the best known output-feedback optimum) in place of `K*`.
pub fn dominance_audit_approximate(
    plant: &PlantSpec,
    k: &Gain,
    reference: &Gain,
) -> Result<DominanceReport> {
    let point = CostPoint::new(plant, k)?;
    let best = CostPoint::new(plant, reference)?;
    let gap = point.cost() - best.cost();
    let sigma_norm = spectral_norm(&best.bundle().sigma);
    let checks = vec![AuditEntry::le(
        COST_GAP_UPPER,
        gap,
        sigma_norm * point.bundle().e.norm_squared() / plant.sigma_min_r(),
        point.cost(),
    )];
    Ok(DominanceReport {
        approximate: true,
        j: point.cost(),
        j_star: best.cost(),
        sigma_star_norm: sigma_norm,
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutEstimate {
    pub mean: f64,
    /// Standard error of the Monte Carlo mean (zero for a single sample).
    pub std_error: f64,
    /// `ρ^{2T}·J/(1-ρ²)`: scale of the truncation bias.
    pub bias_estimate: f64,
}

/// Monte Carlo estimator of the `T`-step cost with `x₀ ~ N(0, X₀)`.
pub struct RolloutSampler<'a> {
    plant: &'a PlantSpec,
    x0_factor: Mat,
    horizon: usize,
    samples: usize,
}

impl<'a> RolloutSampler<'a> {
    pub fn new(plant: &'a PlantSpec, horizon: usize, samples: usize) -> Result<Self> {
        if horizon == 0 || samples == 0 {
            return Err(SofError::Domain("rollout horizon and sample count must be >= 1".into()));
        }
        Ok(Self {
            plant,
            x0_factor: psd_sqrt_factor(plant.x0())?,
            horizon,
            samples,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Per-sample truncated costs; the draws depend only on `seed`, so two
    /// gains evaluated with the same seed share initial states.
    pub fn sample_costs(&self, k: &Gain, seed: u64) -> Result<Vec<f64>> {
        let f = self.plant.closed_loop(k)?;
        let rho = spectral_radius(&f)?;
        if rho >= 1.0 - NumericPolicy::global().stability_margin {
            return Err(SofError::instability("rollout_cost", rho));
        }
        let kc = k.matrix() * self.plant.c();
        let stage = self.plant.q() + kc.transpose() * self.plant.r() * &kc;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.plant.n();
        let costs = (0..self.samples)
            .map(|_| {
                let mut x = &self.x0_factor * gaussian(&mut rng, n, 1, 1.0);
                let mut total = 0.0;
                for _ in 0..self.horizon {
                    total += (x.transpose() * &stage * &x)[(0, 0)];
                    x = &f * x;
                }
                total
            })
            .collect();
        Ok(costs)
    }

    pub fn mean_cost(&self, k: &Gain, seed: u64) -> Result<f64> {
        let costs = self.sample_costs(k, seed)?;
        Ok(costs.iter().sum::<f64>() / costs.len() as f64)
    }
}

pub fn rollout_cost(
    plant: &PlantSpec,
    k: &Gain,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<RolloutEstimate> {
    let sampler = RolloutSampler::new(plant, horizon, samples)?;
    let costs = sampler.sample_costs(k, seed)?;
    let count = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / count;
    let std_error = if costs.len() > 1 {
        let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    let exact = cost(plant, k)?;
    let rho = spectral_radius(&plant.closed_loop(k)?)?;
    let bias_estimate = rho.powi(2 * horizon as i32) * exact / (1.0 - rho * rho);
    Ok(RolloutEstimate {
        mean,
        std_error,
        bias_estimate,
    })
}
