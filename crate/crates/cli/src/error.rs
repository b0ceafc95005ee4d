use std::path::PathBuf;

use sof_core::SofError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("config field `{field}`: {detail}")]
    Field { field: String, detail: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{command}: {source}")]
    Numeric {
        command: &'static str,
        #[source]
        source: SofError,
    },
}

impl CliError {
    pub fn field(field: impl Into<String>, detail: impl Into<String>) -> Self {
        CliError::Field {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub trait NumericContext<T> {
    fn during(self, command: &'static str) -> Result<T>;
}

impl<T> NumericContext<T> for std::result::Result<T, SofError> {
    fn during(self, command: &'static str) -> Result<T> {
        self.map_err(|source| match source {
            SofError::InvalidPlant { field, detail } => CliError::field(format!("plant.{field}"), detail),
            source => CliError::Numeric { command, source },
        })
    }
}
