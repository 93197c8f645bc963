use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value violates one of its invariants.
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: String, reason: String },

    /// A configuration file could not be parsed.
    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("no eligible user for subcarrier {subcarrier}")]
    NoEligibleUser { subcarrier: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("plot error: {0}")]
    Plot(String),
}

impl Error {
    /// Process exit code for this error: 2 for configuration problems, 1
    /// for everything else that goes wrong at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse { .. } => 2,
            _ => 1,
        }
    }
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
