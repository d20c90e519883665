use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reasontrack_core::{BinaryMask, Frame, RunConfig};
use reasontrack_nn::{Graph, Mat, ParamId, ParamStore};
use serde::{Deserialize, Serialize};

use crate::brain::{Brain, BrainDims};
use crate::decoder::{Decoder, DecoderDims};
use crate::encoder::{Encoder, FeatureMap};
use crate::error::{ModelError, Result};
use crate::prompt::{build_prompt, description_of};
use crate::vocab::{Vocabulary, BOS, EOS, IMAGE, PAD, PO, TK};

/// What the brain produced for one (frame, instruction) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonOutput {
    pub text: String,
    pub q_referring: Vec<f64>,
    pub q_purport: Vec<f64>,
    /// Tokens emitted after the prompt, including the final EOS if reached.
    pub token_sequence: Vec<usize>,
    /// Set when `<TK>` or `<PO>` was missing and the final position's
    /// hidden state stood in for it.
    pub fallback: bool,
    /// Set when decoding stopped at the length cap without EOS.
    pub truncated: bool,
}

impl ReasonOutput {
    pub fn flagged(&self) -> bool {
        self.fallback || self.truncated
    }
}

/// The tracker's live conditioning state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryState {
    pub q_referring: Vec<f64>,
    pub q_purport: Vec<f64>,
    pub q_online: Vec<f64>,
    pub tau: f64,
    pub rethink_log: Vec<usize>,
}

/// Decoder output for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPrediction {
    /// Row-major `H*W` logits.
    pub logits: Vec<f64>,
    pub mask: BinaryMask,
    pub purport_score: f64,
    pub q_next_raw: Vec<f64>,
}

impl MaskPrediction {
    /// Binarizes with a strict `logit > 0` test.
    pub fn from_logits(
        logits: Vec<f64>,
        height: usize,
        width: usize,
        frame_index: usize,
        purport_score: f64,
        q_next_raw: Vec<f64>,
    ) -> Result<Self> {
        let grid = logits.iter().map(|&l| l > 0.0).collect();
        let mask = BinaryMask::new(height, width, grid, frame_index)?;
        Ok(Self { logits, mask, purport_score, q_next_raw })
    }
}

/// Encoder, brain and decoder sharing one parameter store.
#[derive(Clone, Debug)]
pub struct TrackModel {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub brain: Brain,
    pub decoder: Decoder,
}

impl TrackModel {
    /// Builds a freshly initialized model; initialization is a pure function
    /// of `config.seed` and the dimensions.
    pub fn new(config: RunConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(
            &mut store,
            config.patch_size,
            config.decoder_dim,
            config.encoder_blocks,
            config.encoder_heads,
            &mut rng,
        );
        let brain = Brain::new(
            &mut store,
            BrainDims {
                vocab: vocab.len(),
                dim: config.brain_dim,
                layers: config.brain_layers,
                heads: config.brain_heads,
                image_tokens: config.image_tokens,
                image_dim: config.decoder_dim,
                query_dim: config.decoder_dim,
                lora_rank: config.lora_rank,
                lora_alpha: config.lora_alpha,
            },
            &mut rng,
        );
        let decoder = Decoder::new(
            &mut store,
            DecoderDims {
                dim: config.decoder_dim,
                blocks: config.decoder_blocks,
                heads: config.decoder_heads,
                patch: config.patch_size,
            },
            &mut rng,
        );
        Ok(Self { config, vocab, store, encoder, brain, decoder })
    }

    pub fn encode(&self, frame: &Frame) -> Result<FeatureMap> {
        self.encoder.encode(&self.store, frame)
    }

    /// Parameters that must never change during training.
    pub fn frozen_params(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.params();
        ids.extend(self.brain.base_params());
        ids
    }

    pub fn encoder_checksum(&self) -> String {
        self.store.checksum(self.encoder.params())
    }

    pub fn brain_base_checksum(&self) -> String {
        self.store.checksum(self.brain.base_params())
    }

    /// Per-position logits `[len, vocab]` for a token sequence.
    pub fn brain_logits(&self, tokens: &[usize], features: &FeatureMap) -> Result<Mat> {
        let mut g = Graph::inference(&self.store);
        let pass = self.brain.forward(&mut g, tokens, features)?;
        Ok(g.value(pass.logits).clone())
    }

    /// Greedy answer generation followed by query extraction at the `<TK>`
    /// and `<PO>` positions.
    pub fn reason(&self, features: &FeatureMap, instruction: &str) -> Result<ReasonOutput> {
        let (prompt, _) = build_prompt(&self.vocab, description_of(instruction));
        let mut seq = prompt.clone();
        let mut truncated = true;
        for _ in 0..self.config.max_answer_tokens {
            let mut g = Graph::inference(&self.store);
            let pass = self.brain.forward(&mut g, &seq, features)?;
            let last = *pass.positions.last().expect("non-empty prompt");
            let next = greedy_token(g.value(pass.logits).row(last));
            seq.push(next);
            if next == EOS {
                truncated = false;
                break;
            }
        }
        let emitted = seq[prompt.len()..].to_vec();
        let mut g = Graph::inference(&self.store);
        let pass = self.brain.forward(&mut g, &seq, features)?;
        let find = |tok: usize| emitted.iter().position(|&t| t == tok).map(|j| pass.positions[prompt.len() + j]);
        let last = *pass.positions.last().expect("non-empty");
        let (tk, po) = (find(TK), find(PO));
        let fallback = tk.is_none() || po.is_none();
        let rows = vec![tk.unwrap_or(last), po.unwrap_or(last)];
        let h = g.gather_rows(pass.hidden, rows);
        let q = self.brain.project(&mut g, h);
        let q = g.value(q);
        if !q.is_finite() {
            return Err(ModelError::NonFinite { stage: "query projection", block: 0 });
        }
        Ok(ReasonOutput {
            text: self.vocab.detokenize(&emitted),
            q_referring: q.row(0).to_vec(),
            q_purport: q.row(1).to_vec(),
            token_sequence: emitted,
            fallback,
            truncated,
        })
    }

    /// Applies `phi` to one brain hidden vector.
    pub fn project_token(&self, hidden: &[f64]) -> Vec<f64> {
        let mut g = Graph::inference(&self.store);
        let h = g.constant(Mat::row_vector(hidden.to_vec()));
        let q = self.brain.project(&mut g, h);
        g.value(q).data().to_vec()
    }

    pub fn decode(&self, features: &FeatureMap, state: &QueryState) -> Result<MaskPrediction> {
        let mut g = Graph::inference(&self.store);
        let row = |g: &mut Graph, v: &[f64]| g.constant(Mat::row_vector(v.to_vec()));
        let (q_r, q_p, q_t) =
            (row(&mut g, &state.q_referring), row(&mut g, &state.q_purport), row(&mut g, &state.q_online));
        let out = self.decoder.decode(&mut g, features, q_r, q_p, q_t)?;
        let (h, w) = features.frame_shape();
        MaskPrediction::from_logits(
            g.value(out.logits).data().to_vec(),
            h,
            w,
            features.frame_index,
            g.scalar(out.score),
            g.value(out.q_next_raw).data().to_vec(),
        )
    }

    pub fn propagate_query(&self, pred: &MaskPrediction) -> Vec<f64> {
        let mut g = Graph::inference(&self.store);
        let x = g.constant(Mat::row_vector(pred.q_next_raw.clone()));
        let y = self.decoder.propagate(&mut g, x);
        g.value(y).data().to_vec()
    }

    pub fn init_online_query(&self) -> Vec<f64> {
        self.store.get(self.decoder.init_query).data().to_vec()
    }

    pub fn iou_token(&self) -> Vec<f64> {
        self.store.get(self.decoder.iou_token).data().to_vec()
    }

    /// A copy running the base brain alone: adapters dropped, base weights
    /// untouched.
    pub fn without_adapters(&self) -> TrackModel {
        let mut base = self.clone();
        base.brain.forget_adapters();
        base
    }

    /// A copy with every adapter folded into its base weight. The copy has no
    /// adapters left, so merging it again fails.
    pub fn lora_merge(&self) -> Result<TrackModel> {
        let mut merged = self.clone();
        merged.brain.merge_adapters(&mut merged.store)?;
        Ok(merged)
    }
}

/// Highest-scoring token that may legally follow (never PAD, BOS or a second
/// image marker). Ties go to the lower id.
fn greedy_token(row: &[f64]) -> usize {
    let mut best = EOS;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if matches!(i, PAD | BOS | IMAGE) {
            continue;
        }
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}
