//! Library side of the `robust-es` command-line tool.

pub mod fit;
pub mod input;
pub mod output;
pub mod simulate;
pub mod tables;

use std::fmt;

/// A failure carrying the process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

/// Exit code for malformed input, configuration or I/O.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for numerical failures.
pub const EXIT_SOLVER: i32 = 3;
/// Exit code for a replication band failure.
pub const EXIT_BAND: i32 = 4;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: msg.into() }
    }

    /// Maps a library error raised during `stage`.
    pub fn from_lib(stage: &str, e: robust_es::Error) -> Self {
        use robust_es::Error as E;
        let code = match e {
            E::InvalidInput(_) | E::BadDegrees(_) => EXIT_INPUT,
            _ => EXIT_SOLVER,
        };
        Self { code, message: format!("{stage}: {e}") }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
