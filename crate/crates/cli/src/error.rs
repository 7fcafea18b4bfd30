//! Command failures and their exit codes.

use std::fmt;

use dropevo_core::analysis::StatsError;
use dropevo_core::fitness::FitnessError;
use dropevo_core::formats::FormatError;
use dropevo_core::ga::GaError;
use dropevo_core::landscape::LandscapeError;

use crate::config::ConfigError;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            exit: Exit::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            exit: Exit::Data,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            exit: Exit::Numeric,
            message: message.into(),
        }
    }

    /// Prefixes the message with the input it concerns.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<GaError> for CliError {
    fn from(e: GaError) -> Self {
        match e {
            GaError::InvalidScore { .. } => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<LandscapeError> for CliError {
    fn from(e: LandscapeError) -> Self {
        match e {
            LandscapeError::SolveFailure { .. } | LandscapeError::NonFinite(_) => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::NonFinite => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<FitnessError> for CliError {
    fn from(e: FitnessError) -> Self {
        CliError::numeric(e.to_string())
    }
}

impl From<dropevo_gcode::CompileError> for CliError {
    fn from(e: dropevo_gcode::CompileError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<dropevo_gcode::layout::LayoutError> for CliError {
    fn from(e: dropevo_gcode::layout::LayoutError) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
