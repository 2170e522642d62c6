//! Process exit codes.

use std::fmt;

use heatwave_core::Error;

pub const SUCCESS: i32 = 0;
pub const DATA_ERROR: i32 = 2;
pub const NOT_CONVERGED: i32 = 3;
pub const USAGE: i32 = 64;

/// An error message paired with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: DATA_ERROR,
            message: message.into(),
        }
    }

    pub fn not_converged(message: impl Into<String>) -> Self {
        Self {
            code: NOT_CONVERGED,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) => USAGE,
            Error::NotConverged { .. } => NOT_CONVERGED,
            _ => DATA_ERROR,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}
