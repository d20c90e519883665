//! Joint loss, example sampling and the staged training loop.

pub mod audit;
mod error;
pub mod joint;
pub mod losses;
mod predict;
pub mod stage;

pub use audit::gradient_audit;
pub use error::{Result, TrainError};
pub use joint::{joint_loss, ExampleInputs, LossNodes, LossWeights};
pub use losses::{mask_loss, purport_loss, purport_target, text_loss, MaskLossWeights};
pub use predict::TrackerPredictor;
pub use stage::{
    example_inputs, loss_csv, sample_example, train_stage, FeatureCache, LossRow, Stage, StagePlan, StageReport,
    TrainExample, CURVE_WINDOW,
};
