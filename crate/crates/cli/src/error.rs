//! Exit-code contract: 0 success, 2 input error, 3 internal error.

use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INPUT,
            error: error.into(),
        }
    }

    pub fn internal(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            error: error.into(),
        }
    }

    pub fn input_msg(message: impl fmt::Display) -> Self {
        Self::input(anyhow::anyhow!("{message}"))
    }

    pub fn context(self, context: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            code: self.code,
            error: self.error.context(context),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<her2kit_core::Error> for CliError {
    fn from(e: her2kit_core::Error) -> Self {
        if e.is_input_error() {
            Self::input(e)
        } else {
            Self::internal(e)
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches context and an exit class to any error.
pub trait ResultExt<T> {
    fn input(self, context: impl fmt::Display) -> CliResult<T>;
    fn internal(self, context: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn input(self, context: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::input(e.into().context(context.to_string())))
    }

    fn internal(self, context: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::internal(e.into().context(context.to_string())))
    }
}
