use thiserror::Error;

pub type Result<T> = std::result::Result<T, SofError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SofError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// The closed loop (or the matrix handed to a Lyapunov solve) is not Schur stable.
    #[error("{context}: not stabilizing, spectral radius {rho:.6e} >= 1")]
    Instability { context: String, rho: f64 },

    #[error("numerical failure in {op}: {detail}")]
    Numerical { op: &'static str, detail: String },

    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// A plant field fails its invariant; `field` names the offending matrix.
    #[error("invalid plant: {field}: {detail}")]
    InvalidPlant { field: &'static str, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("size limit exceeded in {op}: {size} > cap {cap}")]
    Size { op: &'static str, size: usize, cap: usize },

    #[error("gain outside sublevel set: J = {j:.12e} > alpha = {alpha:.12e}")]
    SublevelViolation { j: f64, alpha: f64 },

    #[error("not applicable: {0}")]
    Applicability(String),

    #[error("gain is not stationary: gradient norm {gradnorm:.6e} > tolerance {tol:.6e}")]
    NotStationary { gradnorm: f64, tol: f64 },

    #[error("Hessian is not positive definite (lambda_min = {lambda_min:.6e})")]
    Saddle { lambda_min: f64 },

    #[error("Riccati iteration did not converge: {0}")]
    Stabilizability(String),

    #[error("smoothing radius too large: {rejected} consecutive perturbations left the stabilizing set")]
    RadiusTooLarge { rejected: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("{label}: {source}")]
    Variant {
        label: String,
        #[source]
        source: Box<SofError>,
    },
}

impl SofError {
    pub fn instability(context: impl Into<String>, rho: f64) -> Self {
        SofError::Instability {
            context: context.into(),
            rho,
        }
    }

    pub fn dimension(op: &'static str, detail: impl Into<String>) -> Self {
        SofError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn numerical(op: &'static str, detail: impl Into<String>) -> Self {
        SofError::Numerical {
            op,
            detail: detail.into(),
        }
    }

    /// Wraps the error with a label, e.g. which experiment variant failed.
    pub fn labeled(self, label: impl Into<String>) -> Self {
        SofError::Variant {
            label: label.into(),
            source: Box::new(self),
        }
    }
}
