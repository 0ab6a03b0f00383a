use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
///
/// The variants follow the failure classes the command line maps onto exit
/// codes: configuration and contract problems are caller mistakes, numeric
/// and I/O problems are runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on shapes, ranges or invariants was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN or an infinity.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API was called in an order it does not support.
    #[error("usage error: {0}")]
    Usage(String),

    /// A configuration value is invalid. `field` names the offending key.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// A text input could not be parsed. `line` is 1-based.
    #[error("{}: line {line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    /// Images or metadata could not be turned into a consistent dataset.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// A binary checkpoint is malformed.
    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than the run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Parse { .. } | Error::Contract(_) | Error::Usage(_)
        )
    }
}

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "{what}: non-finite value {} at index {pos}",
            values[pos]
        )));
    }
    Ok(())
}
