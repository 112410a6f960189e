//! File formats, experiment harness, and error plumbing for the `nltg`
//! command-line tool.

use thiserror::Error;

pub mod harness;
pub mod io;

/// CLI-level error, carrying the process exit code: 2 usage, 3 format,
/// 4 numerical.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Format(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

/// Maps core errors onto exit-code categories: solver/factorization
/// breakdowns are numerical, everything else is a usage problem.
pub fn core_err(e: nltg_core::Error) -> CliError {
    use nltg_core::Error::*;
    match e {
        FactorizationFailed { .. } | CgDiverged { .. } | NonFinite { .. }
        | InsufficientSamples { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}
