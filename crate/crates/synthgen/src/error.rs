use reasontrack_core::{CoreError, ObjectId};
use thiserror::Error;

use crate::instructions::Superlative;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("object {0} is not in the scene")]
    UnknownObject(ObjectId),

    #[error("\"{superlative}\" is ambiguous or does not single out object {target}")]
    Ambiguous { superlative: Superlative, target: ObjectId },

    #[error("object {0} is not the unique holder of any superlative")]
    NoSuperlative(ObjectId),

    #[error("invalid benchmark request: {0}")]
    InvalidRequest(String),

    #[error("no acceptable scene after {attempts} attempts (seed {seed})")]
    Exhausted { seed: u64, attempts: usize },

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;
