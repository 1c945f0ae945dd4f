use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sketches use different frequency sets")]
    FingerprintMismatch,

    #[error("degenerate atom: sketch norm below 1e-150 for every initialization")]
    DegenerateAtom,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// True for errors caused by corrupted or mismatched input artifacts.
    pub fn is_data_integrity(&self) -> bool {
        matches!(self, Error::FingerprintMismatch | Error::Format { .. })
    }

    /// True for errors raised by the numerical routines themselves.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateAtom | Error::Numerical(_) | Error::NonFinite(_)
        )
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
