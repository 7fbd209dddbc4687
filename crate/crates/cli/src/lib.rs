//! Command-line front end: argument and config-file parsing, job execution
//! and report files.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{execute, CommandError, Output};
pub use config::{parse_config, ConfigError, Job, JobKind, ParseOutcome};

/// Machine-readable error printed on stderr before a nonzero exit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorReport {
    pub error: String,
    pub kind: String,
    pub field: Option<String>,
    pub message: String,
}

impl ErrorReport {
    pub fn from_config(e: &ConfigError) -> Self {
        ErrorReport {
            error: "config".into(),
            kind: e.kind().into(),
            field: e.field().map(str::to_string),
            message: e.to_string(),
        }
    }

    pub fn from_command(e: &CommandError) -> Self {
        ErrorReport {
            error: "execution".into(),
            kind: e.kind().into(),
            field: None,
            message: e.to_string(),
        }
    }
}
