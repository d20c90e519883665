//! Synthetic videos of colored shapes bouncing around a canvas, with exact
//! ground-truth masks and two instruction records per video: a literal
//! description of one object and a superlative description of another.

mod benchmark;
mod error;
mod instructions;
mod render;
mod scene;

pub use benchmark::{
    build_sequence, generate_benchmark, sample_scene, scene_seed, sequence_name, Benchmark, GenOptions,
    GeneratedSequence, Manifest, ManifestEntry, CHANGE_SUITE, MANIFEST_FILE, SCENE_FILE,
};
pub use error::{Result, SynthError};
pub use instructions::{lexicon, make_instructions, superlative_holder, Superlative};
pub use render::{label_map, render_sequence};
pub use scene::{
    area_at, bounce, covers, rasterize, ChangeEvent, Color, SceneSpec, ShapeClass, ShapeSpec, BACKGROUND,
    MAX_SHAPES, MIN_RADIUS, MIN_SHAPES,
};
