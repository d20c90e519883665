//! Example sampling and the per-stage optimization loop.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasontrack_core::{AnnotatedSequence, InstructionKind};
use reasontrack_model::prompt::{build_prompt, description_of};
use reasontrack_model::{FeatureMap, TrackModel};
use reasontrack_nn::optim::{clip_global_norm, AdamW};
use reasontrack_nn::Graph;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};
use crate::joint::{joint_loss, ExampleInputs, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Single frames with explicit descriptions.
    Image = 1,
    /// Three-frame clips with explicit descriptions.
    Video = 2,
    /// Three-frame clips with explicit and implicit instructions.
    Instruction = 3,
}

impl Stage {
    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::Image),
            2 => Some(Self::Video),
            3 => Some(Self::Instruction),
            _ => None,
        }
    }

    pub fn frames_per_example(self) -> usize {
        match self {
            Self::Image => 1,
            _ => 3,
        }
    }

    pub fn accepts(self, kind: InstructionKind) -> bool {
        self == Self::Instruction || kind == InstructionKind::Explicit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub stage: Stage,
    pub steps: usize,
    pub batch_size: usize,
}

/// One sampled training item; frame indices are strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainExample {
    pub sequence: usize,
    pub record: usize,
    pub instruction: String,
    pub frames: Vec<usize>,
}

/// Draws a (sequence, record, phrasing, frames) tuple. The instruction kind
/// is drawn first, uniformly over the kinds the stage accepts and the data
/// contains, then the record uniformly within that kind. `None` when no
/// record qualifies.
pub fn sample_example(data: &[AnnotatedSequence], stage: Stage, rng: &mut impl Rng) -> Option<TrainExample> {
    let pools: Vec<Vec<(usize, usize)>> = [InstructionKind::Explicit, InstructionKind::Implicit]
        .into_iter()
        .filter(|&k| stage.accepts(k))
        .map(|k| {
            data.iter()
                .enumerate()
                .flat_map(|(si, s)| {
                    s.instructions().iter().enumerate().filter(|(_, r)| r.kind() == k).map(move |(ri, _)| (si, ri))
                })
                .collect::<Vec<_>>()
        })
        .filter(|p| !p.is_empty())
        .collect();
    if pools.is_empty() {
        return None;
    }
    let pool = &pools[rng.gen_range(0..pools.len())];
    let (si, ri) = pool[rng.gen_range(0..pool.len())];
    let seq = &data[si];
    let texts: Vec<&str> = seq.instructions()[ri].instructions().collect();
    let instruction = texts[rng.gen_range(0..texts.len())].to_string();
    let k = stage.frames_per_example().min(seq.len());
    let mut frames = sample(rng, seq.len(), k).into_vec();
    frames.sort_unstable();
    Some(TrainExample { sequence: si, record: ri, instruction, frames })
}

/// Encoder outputs for every frame of every sequence. The encoder is frozen,
/// so these stay valid for the whole run.
pub struct FeatureCache {
    maps: Vec<Vec<FeatureMap>>,
}

impl FeatureCache {
    pub fn build(model: &TrackModel, data: &[AnnotatedSequence]) -> Result<Self> {
        let maps = data
            .iter()
            .map(|s| s.frames().iter().map(|f| model.encode(f)).collect::<reasontrack_model::Result<Vec<_>>>())
            .collect::<reasontrack_model::Result<Vec<_>>>()?;
        Ok(Self { maps })
    }

    pub fn get(&self, sequence: usize, frame: usize) -> &FeatureMap {
        &self.maps[sequence][frame]
    }
}

/// Assembles the loss inputs for `ex`. Text loss is switched off (weight 0)
/// when the instruction has words outside the vocabulary.
pub fn example_inputs<'a>(
    model: &TrackModel,
    data: &'a [AnnotatedSequence],
    cache: &'a FeatureCache,
    ex: &TrainExample,
) -> (ExampleInputs<'a>, bool) {
    let seq = &data[ex.sequence];
    let target = seq.instructions()[ex.record].target();
    let gts = seq.masks_of(target).expect("record targets exist");
    let description = description_of(&ex.instruction);
    let covered = model.vocab.unknown_words(description).is_empty();
    let (prompt, answer) = build_prompt(&model.vocab, description);
    let inputs = ExampleInputs {
        features: ex.frames.iter().map(|&f| cache.get(ex.sequence, f)).collect(),
        gts: ex.frames.iter().map(|&f| &gts[f]).collect(),
        prompt,
        answer,
    };
    (inputs, covered)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub total: f64,
    pub text: f64,
    pub mask: f64,
    pub purport: f64,
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = String::from("step,total,text,mask,purport\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.step, r.total, r.text, r.mask, r.purport);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub curve: Vec<LossRow>,
    pub encoder_checksum: String,
    pub brain_base_checksum: String,
}

/// Steps averaged at each end of the curve when comparing start and finish.
pub const CURVE_WINDOW: usize = 10;

impl StageReport {
    fn window_mean(rows: &[LossRow]) -> f64 {
        rows.iter().map(|r| r.total).sum::<f64>() / rows.len().max(1) as f64
    }

    /// Mean total loss over the first [`CURVE_WINDOW`] steps.
    pub fn initial_loss(&self) -> f64 {
        Self::window_mean(&self.curve[..CURVE_WINDOW.min(self.curve.len())])
    }

    /// Mean total loss over the last [`CURVE_WINDOW`] steps.
    pub fn final_loss(&self) -> f64 {
        Self::window_mean(&self.curve[self.curve.len().saturating_sub(CURVE_WINDOW)..])
    }
}

fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed ^ (u64::from(stage.number())).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains every non-frozen parameter of `model` for `plan.steps` steps.
/// Encoder and brain base checksums are compared before and after; any
/// change is an error.
pub fn train_stage(model: &mut TrackModel, data: &[AnnotatedSequence], plan: &StagePlan) -> Result<StageReport> {
    let stage = plan.stage;
    let enc_before = model.encoder_checksum();
    let base_before = model.brain_base_checksum();
    let cache = FeatureCache::build(model, data)?;
    let weights = LossWeights::from_config(&model.config);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(model.config.seed, stage));
    let mut opt = AdamW::new(model.config.learning_rate, model.config.weight_decay);
    let batch = plan.batch_size.max(1);
    let mut curve = Vec::with_capacity(plan.steps);

    for step in 1..=plan.steps {
        let examples: Vec<TrainExample> = (0..batch)
            .map(|_| sample_example(data, stage, &mut rng).ok_or(TrainError::NoData(stage.number())))
            .collect::<Result<_>>()?;
        let (row, mut grads) = {
            let mut g = Graph::new(&model.store);
            let mut totals = Vec::with_capacity(batch);
            let mut row = LossRow { step, total: 0.0, text: 0.0, mask: 0.0, purport: 0.0 };
            for ex in &examples {
                let (inputs, covered) = example_inputs(model, data, &cache, ex);
                let w = if covered { weights } else { LossWeights { text: 0.0, ..weights } };
                let nodes = joint_loss(&mut g, model, &inputs, &w).map_err(|e| match e {
                    TrainError::Model(reasontrack_model::ModelError::NonFinite { .. }) => TrainError::Diverged { step },
                    other => other,
                })?;
                totals.push(nodes.total);
                row.text += g.scalar(nodes.text);
                row.mask += g.scalar(nodes.mask);
                row.purport += g.scalar(nodes.purport);
            }
            let mut acc = totals[0];
            for &t in &totals[1..] {
                acc = g.add(acc, t);
            }
            let loss = g.scale(acc, 1.0 / batch as f64);
            row.total = g.scalar(loss);
            let n = batch as f64;
            (row.text, row.mask, row.purport) = (row.text / n, row.mask / n, row.purport / n);
            if !row.total.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            (row, g.backward(loss).into_param_grads())
        };
        if model.config.grad_clip > 0.0 {
            clip_global_norm(&mut grads, model.config.grad_clip);
        }
        opt.step(&mut model.store, &grads);
        if model.config.log_every > 0 && (step % model.config.log_every == 0 || step == 1) {
            log::info!(
                "stage {} step {step}/{}: loss {:.4} (text {:.4}, mask {:.4}, purport {:.4})",
                stage.number(),
                plan.steps,
                row.total,
                row.text,
                row.mask,
                row.purport
            );
        }
        curve.push(row);
    }

    let encoder_checksum = model.encoder_checksum();
    let brain_base_checksum = model.brain_base_checksum();
    if encoder_checksum != enc_before {
        return Err(TrainError::FreezeViolation { stage: stage.number(), part: "encoder" });
    }
    if brain_base_checksum != base_before {
        return Err(TrainError::FreezeViolation { stage: stage.number(), part: "brain base" });
    }
    Ok(StageReport { stage, curve, encoder_checksum, brain_base_checksum })
}
