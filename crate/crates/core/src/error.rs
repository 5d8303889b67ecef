use std::path::PathBuf;

use thiserror::Error;

use crate::network::NetworkParams;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum DlnError {
    #[error("invalid gate id {0}, expected 0..=15")]
    InvalidGate(u8),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at batch {batch} (non-finite loss)")]
    Divergence {
        batch: usize,
        /// Parameters at the start of the epoch that diverged.
        checkpoint: Option<Box<NetworkParams>>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl DlnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DlnError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = DlnError> = std::result::Result<T, E>;
