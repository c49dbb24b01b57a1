use std::path::PathBuf;

use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("input lies within {distance:e} of a {op} kink (margin {margin:e})")]
    Kink {
        op: &'static str,
        distance: f64,
        margin: f64,
    },
    #[error("load error in {path}: {msg}")]
    Load { path: PathBuf, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
    #[error("all {trials} trials failed:\n{log}")]
    AllTrialsFailed { trials: usize, log: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Domain(_) => "domain",
            Error::NonFinite { .. } => "non_finite",
            Error::Kink { .. } => "kink",
            Error::Load { .. } => "load",
            Error::Config(_) => "config",
            Error::Diverged { .. } => "diverged",
            Error::AllTrialsFailed { .. } => "all_trials_failed",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
