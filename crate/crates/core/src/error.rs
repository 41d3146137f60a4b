//! Crate-wide error type.
//!
//! Variants are grouped so the CLI can map them onto exit codes:
//! validation and gating problems exit 1, I/O and transport problems exit 2.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate key {key} at {path}:{line}")]
    DuplicateKey {
        path: String,
        line: usize,
        key: String,
    },

    #[error("empty calibration: no (label, verdict) pairs for metric {metric} on test set {test_set}")]
    EmptyCalibration { metric: String, test_set: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("no feasible cover: uncovered {uncovered:?}")]
    Infeasible { uncovered: Vec<String> },

    #[error("all candidates eliminated at step {step}")]
    EmptyCandidatePool { step: u8 },

    #[error("load error: {0}")]
    Load(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("judge parse failure: {0}")]
    JudgeParse(String),

    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("judge run aborted: {0}")]
    JudgeAborted(String),

    #[error("empty report: {0}")]
    EmptyReport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code for the CLI: 1 for validation/gating failures, 2 for I/O and transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Transport { .. } | Error::Load(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
