use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit statuses.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const INVARIANT_FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Runtime(_) | CliError::Io { .. } => exit::RUNTIME,
        }
    }

    /// The message without the category prefix.
    pub fn detail(&self) -> String {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m.clone(),
            CliError::Io { .. } => self.to_string(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<rfac_core::Error> for CliError {
    fn from(e: rfac_core::Error) -> Self {
        match e {
            rfac_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
