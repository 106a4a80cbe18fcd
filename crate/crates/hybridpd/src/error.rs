use std::path::Path;

use hybridpd_core::Error as CoreError;
use serde::Serialize;

use crate::expr::ParseError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Parse,
    Precondition,
    Solver,
    Verdict,
}

impl Family {
    pub fn exit_code(self) -> i32 {
        match self {
            Family::Parse => 2,
            Family::Precondition => 3,
            Family::Solver => 4,
            Family::Verdict => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub family: Family,
    pub message: String,
    /// Byte offset inside an expression, for expression parse errors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(family: Family, message: impl Into<String>) -> Self {
        CliError {
            family,
            message: message.into(),
            offset: None,
            path: None,
        }
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(Family::Parse, message)
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Self::new(Family::Precondition, message)
    }

    pub fn at(mut self, path: &Path) -> Self {
        self.path = Some(path.display().to_string());
        self
    }

    pub fn expression(e: ParseError, text: &str) -> Self {
        CliError {
            offset: Some(e.offset),
            ..Self::parse(format!("in expression '{text}': {e}"))
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.family.exit_code()
    }

    /// `{"error": {...}}` on one line.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "code": self.exit_code(), "family": self.family, "message": self.message, "offset": self.offset, "path": self.path } }).to_string()
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let family = match e {
            CoreError::SolverFailure { .. } | CoreError::LinearSolveFailure(_) => Family::Solver,
            _ => Family::Precondition,
        };
        CliError::new(family, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::precondition(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::precondition(e.to_string())
        } else {
            CliError::parse(e.to_string())
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::precondition(e.to_string())
        } else {
            CliError::parse(e.to_string())
        }
    }
}
