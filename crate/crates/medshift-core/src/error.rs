use alloc::string::String;
use core::fmt;

/// Errors raised by validation and estimation.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A dataset or specification invariant is violated. All validation
    /// errors are raised before any estimation work begins.
    Invalid(String),
    /// An estimation step cannot proceed (degenerate arms, non-finite
    /// influence values, mismatched rows, ...).
    Estimation(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Estimation(msg) => write!(f, "estimation error: {msg}"),
        }
    }
}

#[cfg(test)]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
