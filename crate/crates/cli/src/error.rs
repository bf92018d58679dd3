//! Exit-code taxonomy: 0 ok, 1 gradient check over tolerance, 2 input error,
//! 3 solver failure, 4 optimization divergence.

use std::fmt;

use softgrad::SimError;

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn input(e: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_INPUT, error: e.into() }
    }

    pub fn with_code(code: i32, e: impl Into<anyhow::Error>) -> Self {
        Self { code, error: e.into() }
    }

    /// Classifies a simulator error: malformed inputs are exit 2, everything
    /// that fails while stepping or differentiating is exit 3.
    pub fn sim(e: SimError) -> Self {
        let code = match e {
            SimError::InvalidScene(_)
            | SimError::InvalidMaterial(_)
            | SimError::DegenerateElement { .. }
            | SimError::DimensionMismatch { .. }
            | SimError::Io(_)
            | SimError::Json(_) => EXIT_INPUT,
            _ => EXIT_SOLVER,
        };
        Self { code, error: e.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait Context<T> {
    /// Attach a message and mark the failure as an input error.
    fn input_ctx(self, msg: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Context<T> for Result<T, E> {
    fn input_ctx(self, msg: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::input(e.into().context(msg())))
    }
}
