//! Error type shared across the library.

use core::fmt;

/// Failure modes of the model construction and estimation routines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Error {
    /// A configuration or argument value is outside its valid range. The
    /// payload names the offending parameter.
    InvalidParameter(&'static str),
    /// Two points coincide where a direction vector is required.
    CoincidentPoints,
    /// A matrix that must be symmetric positive definite failed its Cholesky
    /// factorization. The payload names the matrix.
    NotPositiveDefinite(&'static str),
    /// Importance weights collapsed: no particle retains a finite positive
    /// weight.
    DegenerateWeights,
    /// Operand shapes disagree.
    DimensionMismatch { expected: usize, found: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(name) => write!(f, "invalid parameter: {name}"),
            Error::CoincidentPoints => write!(f, "points coincide; range direction is undefined"),
            Error::NotPositiveDefinite(what) => {
                write!(f, "{what} is not symmetric positive definite")
            }
            Error::DegenerateWeights => write!(f, "importance weights are degenerate"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
