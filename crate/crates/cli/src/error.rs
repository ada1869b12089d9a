use std::fmt;

use lumina_core::LuminaError;

/// Failures reported by the CLI, each with a single-token class.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    RunDir(String),
    MissingCache(String),
    GradCheck(String),
    Core(LuminaError),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::RunDir(_) => "RunDirError",
            CliError::MissingCache(_) => "MissingCache",
            CliError::GradCheck(_) => "GradCheckFailed",
            CliError::Core(e) => e.class(),
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Config(m) | CliError::RunDir(m) | CliError::MissingCache(m) | CliError::GradCheck(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    /// One line: `error: <class>: <message>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let message = self.message().replace(['\n', '\r'], " ");
        write!(f, "error: {}: {}", self.class(), message)
    }
}

impl From<LuminaError> for CliError {
    fn from(e: LuminaError) -> Self {
        CliError::Core(e)
    }
}
