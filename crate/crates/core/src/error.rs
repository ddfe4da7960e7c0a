use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("bit position {0} out of range (expected 0..=31)")]
    BitRange(u32),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("placement error: {0}")]
    Placement(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("format error in {field}: {reason}")]
    Format { field: String, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("campaign failed at image {image_id}, injection {injection}: {source}")]
    Campaign {
        image_id: usize,
        injection: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
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

    /// True for errors caused by invalid user input or configuration, as
    /// opposed to failures while running.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Placement(_)
            | Error::BitRange(_)
            | Error::Format { .. }
            | Error::Version { .. }
            | Error::Parse { .. }
            | Error::Json(_) => true,
            Error::Campaign { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
