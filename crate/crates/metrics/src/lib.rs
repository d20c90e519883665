//! Video segmentation metrics: region similarity J (IoU), boundary
//! F-measure, recall above 0.5, and benchmark report assembly.

mod measures;
mod report;

pub use measures::{boundary, boundary_measure, boundary_tolerance, recall_over_threshold, region_similarity};
pub use report::{
    evaluate_benchmark, score_run, EvalOptions, EvalReport, InstructionResult, Phrasings, Prediction, Predictor,
    SequenceResult, RECALL_THRESHOLD,
};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("mask shapes differ: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("predicted {predicted} masks for {expected} frames")]
    FrameCount { predicted: usize, expected: usize },

    #[error("report parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;
