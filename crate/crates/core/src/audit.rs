use serde::{Deserialize, Serialize};

use crate::policy::NumericPolicy;

/// One named inequality `lhs <= rhs`, evaluated numerically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl AuditEntry {
    /// `scale` sets the absolute slack (`audit_abs_slack · max(1, scale)`),
    /// typically the cost at the audited gain.
    pub fn le(name: impl Into<String>, lhs: f64, rhs: f64, scale: f64) -> Self {
        let policy = NumericPolicy::global();
        let slack = policy.audit_abs_slack * scale.abs().max(1.0);
        let pass = lhs <= rhs * (1.0 + policy.audit_rel_slack) + slack;
        Self {
            name: name.into(),
            lhs,
            rhs,
            pass,
        }
    }
}

pub fn all_pass(entries: &[AuditEntry]) -> bool {
    entries.iter().all(|e| e.pass)
}
