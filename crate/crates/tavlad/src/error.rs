//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with arguments that violate its contract
    /// (dimension mismatch, empty input, out-of-range index, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration is internally inconsistent or infeasible.
    #[error("config error: {0}")]
    Config(String),

    /// An I/O operation failed; `path` names the file involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A binary or text file did not match its expected format.
    /// `offset` is the byte position at which the mismatch was detected.
    #[error("{}: format error at byte {offset}: {message}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss ({value}) at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },

    /// A finite-difference probe produced a non-finite loss value.
    #[error("non-finite loss while perturbing {param}[{index}] by {delta:+e}")]
    NonFiniteProbe {
        param: String,
        index: usize,
        delta: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: msg.into(),
        }
    }
}
