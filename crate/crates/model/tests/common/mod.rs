#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasontrack_core::{Frame, RunConfig};
use reasontrack_model::{TrackModel, Vocabulary};

pub const WORDS: [&str; 8] = ["red", "green", "circle", "square", "largest", "smallest", "that", "is"];

pub fn small_config() -> RunConfig {
    RunConfig {
        brain_dim: 32,
        brain_layers: 2,
        brain_heads: 2,
        decoder_dim: 16,
        decoder_blocks: 1,
        decoder_heads: 2,
        patch_size: 8,
        encoder_blocks: 1,
        encoder_heads: 2,
        image_tokens: 4,
        lora_rank: 2,
        lora_alpha: 4.0,
        max_answer_tokens: 12,
        seed: 5,
        ..RunConfig::default()
    }
}

pub fn small_model() -> TrackModel {
    TrackModel::new(small_config(), Vocabulary::new(WORDS)).unwrap()
}

pub fn noise_frame(rng: &mut impl Rng, h: usize, w: usize, index: usize) -> Frame {
    Frame::new(h, w, (0..h * w * 3).map(|_| rng.gen::<f64>()).collect(), index).unwrap()
}

pub fn noise_video(seed: u64, frames: usize) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames).map(|i| noise_frame(&mut rng, 32, 32, i)).collect()
}
