//! Finite-difference audit of the joint loss gradient on a toy-sized model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasontrack_core::{BinaryMask, RunConfig};
use reasontrack_model::prompt::build_prompt;
use reasontrack_model::{FeatureMap, TrackModel, Vocabulary};
use reasontrack_nn::gradcheck::{check_param_gradients, GradCheckReport};
use reasontrack_nn::{Graph, ParamStore};

use crate::error::Result;
use crate::joint::{joint_loss, ExampleInputs, LossWeights};

/// Side of the square toy canvas.
pub const AUDIT_CANVAS: usize = 8;

pub fn audit_config(seed: u64) -> RunConfig {
    RunConfig {
        brain_dim: 32,
        brain_layers: 2,
        brain_heads: 2,
        decoder_dim: 16,
        decoder_blocks: 2,
        decoder_heads: 2,
        patch_size: 4,
        encoder_blocks: 2,
        encoder_heads: 2,
        image_tokens: 4,
        lora_rank: 4,
        lora_alpha: 8.0,
        seed,
        ..RunConfig::default()
    }
}

/// Builds the toy model, moves every trainable tensor off its initial value
/// (so zero-initialized adapters and queries get exercised), and compares
/// the analytic gradient of the three-frame joint loss with central
/// differences for every trainable scalar.
pub fn gradient_audit(seed: u64, step: f64, floor: f64) -> Result<GradCheckReport> {
    let mut model = TrackModel::new(audit_config(seed), Vocabulary::new(["red", "circle"]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA0D1);
    for id in model.store.trainable_ids() {
        for v in model.store.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let n = AUDIT_CANVAS;
    let features: Vec<FeatureMap> = (0..3)
        .map(|i| {
            let px: Vec<f64> = (0..n * n * 3).map(|_| rng.gen()).collect();
            model.encoder.encode_pixels(&model.store, &px, n, n, i)
        })
        .collect::<reasontrack_model::Result<_>>()?;
    let gts: Vec<BinaryMask> = (0..3)
        .map(|i| BinaryMask::from_fn(n, n, i, |y, x| (y + i) % 5 < 3 && x >= 2 + i % 2 && x < 6))
        .collect();
    let (prompt, answer) = build_prompt(&model.vocab, "red circle");
    let ex = ExampleInputs { features: features.iter().collect(), gts: gts.iter().collect(), prompt, answer };
    let w = LossWeights::from_config(&model.config);

    let eval = |store: &ParamStore| {
        let mut g = Graph::inference(store);
        let nodes = joint_loss(&mut g, &model, &ex, &w).expect("toy forward");
        g.scalar(nodes.total)
    };
    let analytic = {
        let mut g = Graph::new(&model.store);
        let nodes = joint_loss(&mut g, &model, &ex, &w)?;
        g.backward(nodes.total).into_param_grads()
    };
    let ids = model.store.trainable_ids();
    Ok(check_param_gradients(&model.store, &ids, &analytic, eval, step, floor))
}
