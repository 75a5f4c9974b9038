//! Error type of the command line and its exit codes.

use std::fmt;
use std::io;
use std::path::Path;

use aotree::train::TrainFailure;
use aotree::Error;

pub const EXIT_IO: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError {
            code: EXIT_IO,
            message: format!("I/O error on {}: {source}", path.display()),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    /// A file another command should have produced is absent.
    pub fn missing(path: &Path, producer: &str) -> Self {
        CliError {
            code: EXIT_IO,
            message: format!("{} not found; run `aotree {producer}` first", path.display()),
        }
    }

    pub fn code(&self) -> i32 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            Error::Parse { .. } | Error::Validation(_) => EXIT_INVALID,
            Error::Numeric(_) => EXIT_NUMERIC,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TrainFailure> for CliError {
    fn from(f: TrainFailure) -> Self {
        let message = f.to_string();
        CliError {
            message,
            ..CliError::from(f.error)
        }
    }
}
