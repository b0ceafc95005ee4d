//! Exact cost, derivatives, landscape constants and descent drivers for
//! static output feedback LQR of discrete-time systems.
//!
//! The plant is `x_{t+1} = A x_t + B u_t`, `y_t = C x_t`, controlled by
//! `u_t = -K y_t`, with cost `J(K) = E Σ x_tᵀQx_t + u_tᵀRu_t` over
//! `x₀` with second moment `X₀`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod constants;
pub mod descent;
pub mod error;
pub mod instances;
pub mod landscape;
pub mod matrixcore;
pub mod oracle;
pub mod policy;
pub mod sofcost;
pub mod zeroth;

pub use audit::AuditEntry;
pub use constants::{bound_audit, landscape_constants, AuditReport, SublevelConstants};
pub use descent::{run_gd, DescentConfig, DescentTrace, IterRecord, Mode, StepSize, Termination};
pub use error::{Result, SofError};
pub use matrixcore::Mat;
pub use policy::NumericPolicy;
pub use sofcost::{cost, cost_bundle, gradient, is_stabilizing, CostBundle, CostPoint, Gain, PlantSpec};
pub use zeroth::{run_zo_gd, zo_gradient_estimate, ZoConfig, ZoStep};
