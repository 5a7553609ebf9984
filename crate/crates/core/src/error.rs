use alloc::string::String;
use core::fmt;

/// Errors reported by the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument failed validation before any work was done.
    InvalidArgument(String),
    /// Two objects that must agree on a dimension do not.
    DimensionMismatch { expected: usize, found: usize },
    /// A caller broke a documented precondition (e.g. a regression target outside `[0, 1]`).
    ContractViolation(String),
    /// A matrix expected to be symmetric positive-definite was not.
    NotPositiveDefinite,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::ContractViolation(msg) => write!(f, "contract violation: {msg}"),
            Error::NotPositiveDefinite => f.write_str("matrix is not positive definite"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
