use reasontrack_model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },

    #[error("frozen weights changed during stage {stage}: {part}")]
    FreezeViolation { stage: u8, part: &'static str },

    #[error("no training examples for stage {0}")]
    NoData(u8),

    #[error("shape: {0}")]
    Shape(String),

    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
