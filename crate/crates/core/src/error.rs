//! Crate-wide error type.
//!
//! Errors are grouped by the exit-code category the CLI reports:
//! configuration problems, data problems and numerical failures.

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error on {date}: {message}")]
    Validation { date: NaiveDate, message: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("split '{0}' contains no calendar dates")]
    EmptySplit(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss trace: {trace:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        trace: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 config error, 2 data error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Shape(_) => 1,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Alignment(_)
            | Error::EmptySplit(_)
            | Error::Domain(_)
            | Error::Checkpoint(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::NonFiniteLoss { .. } | Error::Numerical(_) => 3,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
