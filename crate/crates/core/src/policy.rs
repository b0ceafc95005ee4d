//! Process-wide numeric tolerances.
//!
//! Every tolerance used by the solvers lives in one [`NumericPolicy`] record.
//! The record is read through [`NumericPolicy::global`]; a front end may
//! replace the defaults once, before the first numeric call, with
//! [`NumericPolicy::install`].

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

static GLOBAL: OnceLock<NumericPolicy> = OnceLock::new();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericPolicy {
    /// Relative residual accepted from a discrete Lyapunov solve.
    pub lyapunov_residual: f64,
    /// Relative asymmetry accepted for matrices that must be symmetric.
    pub symmetry_slack: f64,
    /// A gain is stabilizing when the closed-loop spectral radius is below `1 - stability_margin`.
    pub stability_margin: f64,
    /// Largest state dimension solved through the Kronecker system; above it Smith doubling is used.
    pub lyapunov_direct_max_n: usize,
    /// Sweep cap for Smith doubling.
    pub smith_max_sweeps: usize,
    /// Iteration cap for the real Schur decomposition behind eigenvalue routines.
    pub eigen_max_iter: usize,
    /// Maximum number of gain entries (m*d) for dense Hessian assembly.
    pub hessian_cap: usize,
    /// Relative slack on `lhs <= rhs` in bound audits.
    pub audit_rel_slack: f64,
    /// Absolute slack on audits, scaled by `max(1, J)`; absorbs rounding when both sides vanish.
    pub audit_abs_slack: f64,
    /// Successive-change tolerance for Riccati value iteration.
    pub dare_tol: f64,
    pub dare_max_sweeps: usize,
    /// Relative residual accepted for the Riccati solution.
    pub dare_residual: f64,
    /// Gradient norm below which a gain counts as stationary for certificates.
    pub stationary_tol: f64,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self {
            lyapunov_residual: 1e-10,
            symmetry_slack: 1e-12,
            stability_margin: 1e-12,
            lyapunov_direct_max_n: 50,
            smith_max_sweeps: 64,
            eigen_max_iter: 10_000,
            hessian_cap: 400,
            audit_rel_slack: 1e-9,
            audit_abs_slack: 1e-12,
            dare_tol: 1e-12,
            dare_max_sweeps: 200_000,
            dare_residual: 1e-9,
            stationary_tol: 1e-8,
        }
    }
}

impl NumericPolicy {
    pub fn global() -> &'static NumericPolicy {
        GLOBAL.get_or_init(NumericPolicy::default)
    }

    /// Installs `self` as the process-wide policy. Fails (returning the
    /// rejected record) if a policy was already installed or read.
    pub fn install(self) -> Result<(), NumericPolicy> {
        GLOBAL.set(self)
    }
}
