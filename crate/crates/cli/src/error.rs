use std::fmt::Display;

/// Failure of a CLI run, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or input files. Exit code 2.
    Validation(String),
    /// A computation failed. Exit code 1.
    Runtime(String),
    /// A verification check or replay comparison did not pass. Exit code 1.
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) | CliError::CheckFailed(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
            CliError::CheckFailed(_) => "check_failed",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) | CliError::CheckFailed(m) => m,
        }
    }

    /// The one-line JSON record written to standard error.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.message() }).to_string()
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

pub trait Classify<T> {
    fn invalid(self, what: &str) -> Result<T, CliError>;
    fn failed(self, what: &str) -> Result<T, CliError>;
}

impl<T, E: Display> Classify<T> for Result<T, E> {
    fn invalid(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Validation(format!("{what}: {e}")))
    }

    fn failed(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(format!("{what}: {e}")))
    }
}
