use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing columns {missing:?}, unexpected columns {extra:?}")]
    Schema {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("split sizing error: bucket {bucket} cannot be filled ({reason})")]
    Sizing { bucket: String, reason: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("backend error after {attempts} attempt(s): {message}")]
    Backend { attempts: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("interrupted: {0}")]
    Interrupted(String),

    #[error("unparseable prediction")]
    Unparseable,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("sample size {n} outside supported range {min}..={max}")]
    Range { n: usize, min: usize, max: usize },

    #[error("pairing error: {0}")]
    Pairing(String),

    // The cause is part of the message rather than a `#[source]`, so chained
    // reports do not print it twice.
    #[error("I/O error on {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    /// True for errors caused by user-supplied configuration or inputs, as
    /// opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Schema { .. } | Error::Sizing { .. }
        )
    }
}
