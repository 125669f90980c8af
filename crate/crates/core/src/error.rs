//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised by kernels, optimizers, closed forms and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The input matrix has no singular value above the absolute floor.
    #[error("matrix is numerically zero (largest singular value {largest:e})")]
    ZeroMatrix { largest: f64 },

    /// An iterative kernel stopped before reaching its accuracy target.
    #[error("{kernel} did not converge (residual {residual:e})")]
    NonConvergence { kernel: &'static str, residual: f64 },

    /// A dimension was zero or otherwise unusable.
    #[error("invalid dimension: {0}")]
    Dimension(String),

    /// Two operands had incompatible shapes.
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    /// An input contained NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A prior scheme had nonpositive or inconsistent parameters.
    #[error("invalid prior scheme: {0}")]
    InvalidScheme(String),

    /// A data model or run description violated its invariants.
    #[error("invalid {what}: {msg}")]
    InvalidSpec { what: &'static str, msg: String },

    /// A step size at or above the stability bound of a closed form.
    #[error("step size {eta} is not below the stability bound {bound}")]
    StepSizeTooLarge { eta: f64, bound: f64 },

    /// An optimizer step produced NaN or infinity.
    #[error("optimizer update produced a non-finite value at step {step}")]
    NonFiniteUpdate { step: usize },

    /// Theorem hypotheses fail and no override was requested.
    #[error("theorem hypotheses not satisfied: {0}")]
    ConditionsNotMet(String),

    /// A configuration file could not be parsed or validated.
    #[error("config error{}: {msg}", location(.line, .key))]
    Config {
        line: Option<usize>,
        key: Option<String>,
        msg: String,
    },

    /// Filesystem failure with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// CSV encoding or decoding failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON encoding failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn location(line: &Option<usize>, key: &Option<String>) -> String {
    match (line, key) {
        (Some(l), Some(k)) => format!(" at line {l}, key `{k}`"),
        (Some(l), None) => format!(" at line {l}"),
        (None, Some(k)) => format!(" at key `{k}`"),
        (None, None) => String::new(),
    }
}

impl Error {
    /// Builds an [`Error::Io`] carrying the path that failed.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Builds an [`Error::InvalidSpec`].
    pub fn spec(what: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidSpec {
            what,
            msg: msg.into(),
        }
    }

    /// True when the error stems from user configuration rather than runtime.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidSpec { .. }
                | Error::InvalidScheme(_)
                | Error::Dimension(_)
        )
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
