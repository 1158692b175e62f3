use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigIssue;

/// Errors raised by the sampling engine, experiment drivers and I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("rejection sampler exceeded its budget of {budget} proposals")]
    RejectionBudget { budget: usize },

    #[error("step-size tuning failed to reach the acceptance band after {rounds} rounds (trace: {trace:?})")]
    Tuning {
        rounds: usize,
        /// (alpha0, measured acceptance) for every pilot round.
        trace: Vec<(f64, f64)>,
    },

    #[error("no data to render")]
    EmptyData,

    #[error("invalid configuration: {}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("malformed input file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
