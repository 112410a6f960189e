//! Error type shared by all modules.

use core::fmt;

/// Errors raised by the reconstruction primitives.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A buffer length does not match the expected number of elements.
    SizeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    /// Image side and scan geometry disagree.
    GeometryMismatch { image_side: usize, expected: usize },
    /// An edge field does not share the sparsity pattern of its graph.
    PatternMismatch,
    /// A parameter violates its documented precondition.
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    /// The covariance Cholesky factorization hit a nonpositive pivot;
    /// the diagonal shift is too small for the given pattern.
    FactorizationFailed { delta_c: f64 },
    /// The conjugate-gradient iteration produced a non-finite or negative
    /// curvature value, which signals a configuration bug.
    CgDiverged { iteration: usize },
    /// A value that must be finite is NaN or infinite.
    NonFinite { what: &'static str },
    /// Chain statistics were queried before enough samples accumulated.
    InsufficientSamples { have: u64, need: u64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SizeMismatch {
                what,
                expected,
                actual,
            } => write!(f, "{what}: expected length {expected}, got {actual}"),
            Error::GeometryMismatch {
                image_side,
                expected,
            } => write!(
                f,
                "image side {image_side} does not match scan geometry side {expected}"
            ),
            Error::PatternMismatch => write!(f, "edge field pattern does not match weight graph"),
            Error::InvalidParameter { name, reason } => {
                write!(f, "invalid parameter `{name}`: {reason}")
            }
            Error::FactorizationFailed { delta_c } => write!(
                f,
                "covariance factorization failed: diagonal shift delta_c = {delta_c} is too small"
            ),
            Error::CgDiverged { iteration } => {
                write!(f, "conjugate gradient diverged at iteration {iteration}")
            }
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::InsufficientSamples { have, need } => {
                write!(f, "need at least {need} accumulated samples, have {have}")
            }
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
