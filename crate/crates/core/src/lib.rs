//! Shared data model: frames, masks, instruction records, annotated
//! sequences, their on-disk layout, and the run configuration.

mod config;
mod error;
pub mod io;
mod types;

pub use config::{load_config, RunConfig};
pub use error::{CoreError, Result};
pub use io::{load_sequence, save_sequence};
pub use types::{
    AnnotatedSequence, BinaryMask, Frame, InstructionKind, InstructionRecord, ObjectId, MIN_FRAME_SIDE,
    REPHRASINGS_PER_RECORD,
};
