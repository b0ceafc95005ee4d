//! Run configuration: a TOML (or JSON) document with top-level keys
//! `command`, `plant`, `params` and `output`. Matrices are arrays of rows.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use sof_core::{Gain, Mat, PlantSpec};

use crate::error::{CliError, NumericContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    GradCheck,
    HessCheck,
    Constants,
    Descend,
    Budget,
    Dare,
    Dominance,
    ZoDescend,
    Scan,
    Prop1,
    Classify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::GradCheck => "grad-check",
            Command::HessCheck => "hess-check",
            Command::Constants => "constants",
            Command::Descend => "descend",
            Command::Budget => "budget",
            Command::Dare => "dare",
            Command::Dominance => "dominance",
            Command::ZoDescend => "zo-descend",
            Command::Scan => "scan",
            Command::Prop1 => "prop1",
            Command::Classify => "classify",
        }
    }
}

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(rename = "X0")]
    pub x0: Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    #[serde(default = "default_report")]
    pub report: String,
    /// Trace file name; defaults to `trace.csv` or `trace.json` by format.
    pub trace: Option<String>,
    #[serde(default)]
    pub format: TraceFormat,
    #[serde(default = "default_scan")]
    pub scan: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            report: default_report(),
            trace: None,
            format: TraceFormat::Csv,
            scan: default_scan(),
        }
    }
}

impl OutputConfig {
    pub fn trace_name(&self) -> String {
        self.trace.clone().unwrap_or_else(|| match self.format {
            TraceFormat::Csv => "trace.csv".into(),
            TraceFormat::Json => "trace.json".into(),
        })
    }
}

fn default_report() -> String {
    "report.json".into()
}

fn default_scan() -> String {
    "scan.csv".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Option<Command>,
    plant: Option<PlantConfig>,
    #[serde(default)]
    params: Map<String, Value>,
    #[serde(default)]
    output: OutputConfig,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub plant: Option<PlantConfig>,
    pub params: Map<String, Value>,
    pub output: OutputConfig,
    /// SHA-256 of the config bytes.
    pub digest: String,
}

impl RunConfig {
    pub fn load(path: &Path, command: Command) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let parse_err = |detail: String| CliError::Parse {
            path: path.to_path_buf(),
            detail,
        };
        let text = std::str::from_utf8(&bytes).map_err(|e| parse_err(e.to_string()))?;
        let is_json = path.extension().is_some_and(|ext| ext == "json");
        let value: Value = if is_json {
            serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| parse_err(e.to_string()))?
        };
        let raw: RawConfig = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        if let Some(declared) = raw.command {
            if declared != command {
                return Err(CliError::field(
                    "command",
                    format!("config declares `{}` but `{}` was invoked", declared.name(), command.name()),
                ));
            }
        }
        Ok(Self {
            command,
            plant: raw.plant,
            params: raw.params,
            output: raw.output,
            digest: hex::encode(Sha256::digest(&bytes)),
        })
    }

    pub fn plant(&self) -> Result<PlantSpec> {
        let plant = self
            .plant
            .as_ref()
            .ok_or_else(|| CliError::field("plant", format!("`{}` needs a plant", self.command.name())))?;
        plant.build()
    }

    /// Deserializes `params` into `T`, or an empty table when absent.
    pub fn params<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(Value::Object(self.params.clone())).map_err(|e| CliError::field("params", e.to_string()))
    }

    /// `params` without the listed keys, for handing the remainder to a core config type.
    pub fn params_without(&self, keys: &[&str]) -> Value {
        let mut map = self.params.clone();
        for key in keys {
            map.remove(*key);
        }
        Value::Object(map)
    }
}

impl PlantConfig {
    pub fn build(&self) -> Result<PlantSpec> {
        PlantSpec::new(
            matrix("plant.A", &self.a)?,
            matrix("plant.B", &self.b)?,
            matrix("plant.C", &self.c)?,
            matrix("plant.Q", &self.q)?,
            matrix("plant.R", &self.r)?,
            matrix("plant.X0", &self.x0)?,
        )
        .during("plant")
    }
}

/// Row arrays to a matrix; every row must have the same nonzero length.
pub fn matrix(field: &str, rows: &Rows) -> Result<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(CliError::field(field, "matrix must have at least one nonempty row"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(CliError::field(
            field,
            format!("row {i} has {} entries, expected {cols}", rows[i].len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::field(field, "entries must be finite"));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn gain(field: &str, rows: &Rows, plant: &PlantSpec) -> Result<Gain> {
    let k = matrix(field, rows)?;
    if k.shape() != (plant.m(), plant.d()) {
        return Err(CliError::field(
            field,
            format!("gain is {}x{}, plant needs {}x{}", k.nrows(), k.ncols(), plant.m(), plant.d()),
        ));
    }
    Gain::new(k).during("gain")
}

pub fn rows(m: &Mat) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}
