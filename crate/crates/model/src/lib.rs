//! The tracking model: a frozen patch encoder, a small reasoning brain that
//! turns (frame, instruction) into referring and purport queries, a
//! query-conditioned mask decoder, and the online tracker that ties them
//! together with purport-gated rethinking.

pub mod brain;
pub mod checkpoint;
pub mod decoder;
pub mod encoder;
mod error;
mod model;
mod pos;
pub mod prompt;
pub mod tracker;
pub mod vocab;

pub use decoder::fuse_purport;
pub use encoder::FeatureMap;
pub use error::{ModelError, Result};
pub use model::{MaskPrediction, QueryState, ReasonOutput, TrackModel};
pub use pos::{sinusoid_1d, sinusoid_2d};
pub use tracker::{run, Ablation, SessionStats, TrackRun, TrackSession, TrackerOptions, TrackingModel};
pub use vocab::Vocabulary;
