//! Batch front end for the `sof-core` operations.
//!
//! A run loads one config, executes one command, writes its artifacts and
//! finally a JSON report `{command, inputs_digest, results, pass}`.

pub mod commands;
pub mod config;
pub mod error;
pub mod export;

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sof_core::NumericPolicy;

pub use config::{Command, RunConfig, TraceFormat};
pub use error::{CliError, Result};
pub use export::{export_trace, trace_csv};

/// Environment variable naming a TOML file of numeric-policy overrides.
pub const POLICY_ENV: &str = "SOF_LANDSCAPE_POLICY";

#[derive(Debug, Serialize)]
pub struct Report<'a> {
    pub command: &'static str,
    pub inputs_digest: &'a str,
    pub results: &'a Value,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub pass: bool,
    pub report: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

/// Installs the policy file named by [`POLICY_ENV`], if set. Fields left out
/// keep their defaults.
pub fn install_policy_from_env() -> Result<Option<NumericPolicy>> {
    let Some(path) = std::env::var_os(POLICY_ENV) else {
        return Ok(None);
    };
    let path = PathBuf::from(path);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let policy: NumericPolicy = toml::from_str(&text).map_err(|e| CliError::Parse {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    policy
        .install()
        .map_err(|_| CliError::field(POLICY_ENV, "numeric policy was already in use"))?;
    Ok(Some(policy))
}

pub fn run(command: Command, config: &Path, out: Option<&Path>) -> Result<RunSummary> {
    let cfg = RunConfig::load(config, command)?;
    let outcome = commands::execute(&cfg)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;

    let mut artifacts = Vec::new();
    for artifact in &outcome.artifacts {
        match artifact {
            commands::Artifact::Trace(trace) => {
                let path = dir.join(cfg.output.trace_name());
                export_trace(trace, &path, cfg.output.format)?;
                artifacts.push(path);
            }
            commands::Artifact::Scan(csv) => {
                let path = dir.join(&cfg.output.scan);
                export::write_atomic(&path, csv.as_bytes())?;
                artifacts.push(path);
            }
        }
    }
    let report = Report {
        command: command.name(),
        inputs_digest: &cfg.digest,
        results: &outcome.results,
        pass: outcome.pass,
    };
    let mut body = serde_json::to_string_pretty(&report).expect("report serializes");
    body.push('\n');
    let report_path = dir.join(&cfg.output.report);
    export::write_atomic(&report_path, body.as_bytes())?;
    Ok(RunSummary {
        pass: outcome.pass,
        report: report_path,
        artifacts,
    })
}
