//! Error classes and their exit codes.

use serde::Serialize;
use std::fmt;

/// Failure category of a run. Each maps to a distinct process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

/// A failure with enough context to emit a structured diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
    /// Key path into the configuration document, for parse errors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Name of the constraint being tested when the failure occurred.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
            path: None,
            constraint: None,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::new(ErrorKind::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError::new(ErrorKind::Data, message)
    }

    pub fn at_path(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }

    pub fn for_constraint(mut self, name: &str) -> Self {
        self.constraint = Some(name.to_string());
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// One-line JSON diagnostic for the error stream.
    pub fn diagnostic(&self) -> String {
        let body = serde_json::json!({
            "error": {
                "kind": self.kind,
                "exit_code": self.exit_code(),
                "message": self.message,
                "path": self.path,
                "constraint": self.constraint,
            }
        });
        body.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error", format!("{:?}", self.kind).to_lowercase())?;
        if let Some(c) = &self.constraint {
            write!(f, " in constraint `{c}`")?;
        }
        if let Some(p) = &self.path {
            write!(f, " at `{p}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<crobust::Error> for CliError {
    fn from(e: crobust::Error) -> Self {
        use crobust::Error as E;
        let kind = match &e {
            E::Config(_) | E::InvalidInput(_) => ErrorKind::Config,
            E::Data(_)
            | E::Underdetermined(_)
            | E::CollinearFocal { .. }
            | E::ClusterIdentification { .. } => ErrorKind::Data,
            E::NotPsd { .. }
            | E::NotPd { .. }
            | E::ShortcutInvalid { .. }
            | E::SingularAdjustment { .. }
            | E::DegenerateVariance(_)
            | E::DegreesOfFreedomTooSmall { .. } => ErrorKind::Numerical,
        };
        CliError::new(kind, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
