use std::path::PathBuf;

use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event {kind} scheduled at {requested}, before the current clock {now}")]
    BackInTime {
        now: SimTime,
        requested: SimTime,
        kind: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// A plan or world configuration that cannot be run. `field` names the
/// offending key as it appears in the plan file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read plan {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse plan: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("no run CSVs found in {0}")]
    Empty(PathBuf),
}

impl ResultsError {
    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            ResultsError::Io { path, .. }
            | ResultsError::Csv { path, .. }
            | ResultsError::Malformed { path, .. } => Some(path),
            ResultsError::Empty(_) => None,
        }
    }
}
