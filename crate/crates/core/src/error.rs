use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for {what} of length {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("row {row} has never been written")]
    UninitializedRow { row: usize },

    #[error("threshold profile error: {0}")]
    Profile(String),

    #[error("cannot calibrate {what} {target}: {reason}")]
    Calibration {
        what: &'static str,
        target: f64,
        reason: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate batch norm: gamma is zero")]
    DegenerateBn,

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, found: usize) -> Self {
        Error::Shape {
            what,
            expected,
            found,
        }
    }

    pub(crate) fn threshold_calibration(target: u32, reason: impl Into<String>) -> Self {
        Error::Calibration {
            what: "HD threshold",
            target: target as f64,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
