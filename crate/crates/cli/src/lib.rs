//! Command implementations behind the `foldcore` binary.
//!
//! Each command turns a [`RunConfig`] into a [`Report`]: a CSV body with a
//! header row, a JSON summary, and an optional failure message for commands
//! that completed only partially.

pub mod commands;
pub mod config;
pub mod problems;

pub use config::{ConfigError, RunConfig};

/// Errors mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(#[from] foldcore::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

/// Output of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    /// Additional CSV files as `(suffix, body)`, written next to the main output.
    pub extra: Vec<(String, String)>,
    pub summary: serde_json::Value,
    /// Set when the command wrote partial results but must exit with failure.
    pub failure: Option<String>,
}

impl Report {
    pub fn new(csv: String, summary: serde_json::Value) -> Self {
        Self {
            csv,
            extra: Vec::new(),
            summary,
            failure: None,
        }
    }
}

/// Formats a float for CSV output; the shortest round-trip representation.
pub fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}
