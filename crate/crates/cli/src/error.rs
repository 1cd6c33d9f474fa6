use std::path::PathBuf;

use evcs_core::pricing::PricingError;
use evcs_core::scenario::GenError;
use evcs_core::{DualError, SimError};
use serde::Serialize;

use crate::config::InvalidField;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config key `{}`: {}", .0.key, .0.reason)]
    Config(InvalidField),
    #[error("{path}: malformed artifact: {reason}")]
    Artifact { path: PathBuf, reason: String },
    #[error("stage `{stage}` needs {missing}; run `{run_first}` first")]
    MissingStage {
        stage: &'static str,
        missing: PathBuf,
        run_first: &'static str,
    },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Machine-readable form printed on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_first: Option<&'static str>,
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Artifact { .. } => "artifact",
            Error::MissingStage { .. } => "missing_stage",
            Error::Gen(_) => "generate",
            Error::Dual(_) => "solve",
            Error::Pricing(_) => "price",
            Error::Sim(_) => "simulate",
            Error::Threads(_) => "threads",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::MissingStage { .. } => 3,
            Error::Io { .. } | Error::Artifact { .. } => 4,
            _ => 1,
        }
    }

    pub fn report(&self) -> ErrorReport {
        let (key, path, run_first) = match self {
            Error::Config(f) => (Some(f.key.clone()), None, None),
            Error::Io { path, .. } | Error::Artifact { path, .. } => (None, Some(path.clone()), None),
            Error::MissingStage {
                missing, run_first, ..
            } => (None, Some(missing.clone()), Some(*run_first)),
            _ => (None, None, None),
        };
        ErrorReport {
            kind: self.kind(),
            message: self.to_string(),
            key,
            path,
            run_first,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
