use sinc_core::SincError;
use thiserror::Error;

/// Everything the command-line layer can fail with. File errors carry
/// one-based line and field positions so the message points at the exact
/// offending cell.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{row}:{col}: {message}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("{path}:{row}:{col}: negative count")]
    NegativeCount { path: String, row: usize, col: usize },

    #[error("{path}:{row}: row has {found} fields where {expected} were expected")]
    RaggedRows {
        path: String,
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] SincError),

    #[error("run record: {0}")]
    Record(#[from] serde_json::Error),
}

impl CliError {
    /// Stable one-word category prefixed to exit messages.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Parse { .. } | CliError::NegativeCount { .. } | CliError::RaggedRows { .. } => {
                "parse"
            }
            CliError::Config(_) => "config",
            CliError::Model(_) => "model",
            CliError::Record(_) => "record",
        }
    }
}
