use std::path::PathBuf;

use reasontrack_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: {reason}")]
    Shape { what: &'static str, reason: String },

    #[error("prompt must contain exactly one <IMAGE> marker, found {0}")]
    ImageMarker(usize),

    #[error("non-finite value in {stage} (block {block})")]
    NonFinite { stage: &'static str, block: usize },

    #[error("adapters were already merged into the base weights")]
    AlreadyMerged,

    #[error("frame {got} arrived out of order, expected frame {expected}")]
    OutOfOrder { expected: usize, got: usize },

    #[error("empty video")]
    EmptyVideo,

    #[error("{path}: checkpoint: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl ModelError {
    pub(crate) fn shape(what: &'static str, reason: impl Into<String>) -> Self {
        Self::Shape { what, reason: reason.into() }
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
