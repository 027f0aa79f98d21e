use std::fmt;

/// Failure of one pipeline stage. Configuration problems are caught before
/// any compute or output; runtime failures happen while working.
#[derive(Debug)]
pub enum CliError {
    Config { stage: &'static str, message: String },
    Runtime { stage: &'static str, message: String },
}

impl CliError {
    pub fn config(stage: &'static str, message: impl Into<String>) -> Self {
        CliError::Config {
            stage,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime { .. } => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { stage, message } => write!(f, "{stage}: configuration error: {message}"),
            CliError::Runtime { stage, message } => write!(f, "{stage}: {message}"),
        }
    }
}

impl std::error::Error for CliError {}

/// `map_err` adapter for runtime failures of `stage`.
pub fn runtime<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Runtime {
        stage,
        message: e.to_string(),
    }
}

/// `map_err` adapter for configuration failures of `stage`.
pub fn config<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Config {
        stage,
        message: e.to_string(),
    }
}
