//! Small causal token model that reads an image prefix and an instruction and
//! answers with a fixed phrase carrying the `<TK>` and `<PO>` tokens.
//!
//! Base weights (embedding table, blocks, output head) are frozen. Training
//! touches the low-rank adapters on the attention projections, the image
//! prefix projector and the query projection `phi`.

use rand::Rng;
use reasontrack_nn::layers::{attend, normal_mat, LayerNorm, Linear, Mlp};
use reasontrack_nn::{Graph, Mat, NodeId, ParamId, ParamStore};

use crate::encoder::FeatureMap;
use crate::error::{ModelError, Result};
use crate::pos::sinusoid_1d;
use crate::vocab::IMAGE;

/// Low-rank update `scale · x·down·up` added to a frozen linear map.
/// `down` is `[d_in, rank]`, `up` is `[rank, d_out]` and starts at zero.
#[derive(Clone, Debug)]
pub struct LoraAdapter {
    pub down: ParamId,
    pub up: ParamId,
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptedLinear {
    pub base: Linear,
    pub lora: Option<LoraAdapter>,
}

impl AdaptedLinear {
    fn new(store: &mut ParamStore, name: &str, dim: usize, rank: usize, alpha: f64, rng: &mut impl Rng) -> Self {
        let base = Linear::new(store, &format!("brain.base.{name}"), dim, dim, true, false, rng);
        let down = store.add(
            format!("brain.lora.{name}.down"),
            normal_mat(rng, dim, rank, 1.0 / (dim as f64).sqrt()),
            true,
        );
        let up = store.add(format!("brain.lora.{name}.up"), Mat::zeros(rank, dim), true);
        Self { base, lora: Some(LoraAdapter { down, up, scale: alpha / rank as f64 }) }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let y = self.base.forward(g, x);
        let Some(l) = &self.lora else { return y };
        let (down, up) = (g.param(l.down), g.param(l.up));
        let h = g.matmul(x, down);
        let h = g.matmul(h, up);
        let h = g.scale(h, l.scale);
        g.add(y, h)
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: AdaptedLinear,
    k: AdaptedLinear,
    v: AdaptedLinear,
    o: AdaptedLinear,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    fn adapted(&self) -> [&AdaptedLinear; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    fn adapted_mut(&mut self) -> [&mut AdaptedLinear; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }
}

/// Sizes needed to build a [`Brain`].
#[derive(Clone, Copy, Debug)]
pub struct BrainDims {
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub image_tokens: usize,
    pub image_dim: usize,
    pub query_dim: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

#[derive(Clone, Debug)]
pub struct Brain {
    pub dims: BrainDims,
    embed: ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: ParamId,
    projector: Mlp,
    phi: Mlp,
}

/// Node handles from one teacher-forced forward pass.
pub struct BrainPass {
    /// `[len, vocab]` over the expanded sequence.
    pub logits: NodeId,
    /// `[len, dim]` final-norm hidden states.
    pub hidden: NodeId,
    /// For each input token, its row in the expanded sequence. The image
    /// marker maps to the last image-prefix row.
    pub positions: Vec<usize>,
}

/// Gain on the frozen query/key projections and output head. Unit-gain
/// random attention is close to uniform, which washes the description out
/// of the `<TK>` state, and a unit-gain head can only fit the answer text by
/// aligning every final hidden state to the same direction.
pub const BASE_GAIN: f64 = 4.0;

impl Brain {
    pub fn new(store: &mut ParamStore, dims: BrainDims, rng: &mut impl Rng) -> Self {
        let d = dims.dim;
        let embed = store.add("brain.base.embed", normal_mat(rng, dims.vocab, d, 1.0), false);
        let blocks = (0..dims.layers)
            .map(|i| {
                let n = format!("block{i}");
                let mut lin = |p: &str, rng: &mut _| {
                    AdaptedLinear::new(store, &format!("{n}.attn.{p}"), d, dims.lora_rank, dims.lora_alpha, rng)
                };
                let (q, k, v, o) = (lin("q", rng), lin("k", rng), lin("v", rng), lin("o", rng));
                for w in [q.base.weight, k.base.weight] {
                    store.get_mut(w).scale_assign(BASE_GAIN);
                }
                Block {
                    ln1: LayerNorm::new(store, &format!("brain.base.{n}.ln1"), d, false),
                    q,
                    k,
                    v,
                    o,
                    ln2: LayerNorm::new(store, &format!("brain.base.{n}.ln2"), d, false),
                    mlp: Mlp::new(store, &format!("brain.base.{n}.mlp"), &[d, 4 * d, d], false, rng),
                }
            })
            .collect();
        let ln_f = LayerNorm::new(store, "brain.base.ln_f", d, false);
        let head = store.add("brain.base.head", normal_mat(rng, d, dims.vocab, BASE_GAIN / (d as f64).sqrt()), false);
        let projector = Mlp::new(store, "brain.projector", &[dims.image_dim, d, d], true, rng);
        let phi = Mlp::new(store, "brain.phi", &[d, d, d, dims.query_dim], true, rng);
        Self { dims, embed, blocks, ln_f, head, projector, phi }
    }

    /// Frozen base weights.
    pub fn base_params(&self) -> Vec<ParamId> {
        let mut out = vec![self.embed];
        for b in &self.blocks {
            out.extend(b.ln1.params());
            for a in b.adapted() {
                out.extend(a.base.params());
            }
            out.extend(b.ln2.params());
            out.extend(b.mlp.params());
        }
        out.extend(self.ln_f.params());
        out.push(self.head);
        out
    }

    pub fn adapter_params(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .flat_map(|b| b.adapted())
            .filter_map(|a| a.lora.as_ref())
            .flat_map(|l| [l.down, l.up])
            .collect()
    }

    /// Up-projections of every adapter.
    pub fn adapter_up_params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(|b| b.adapted()).filter_map(|a| a.lora.as_ref()).map(|l| l.up).collect()
    }

    pub fn projector_params(&self) -> Vec<ParamId> {
        self.projector.params()
    }

    pub fn phi_params(&self) -> Vec<ParamId> {
        self.phi.params()
    }

    pub fn has_adapters(&self) -> bool {
        self.blocks.iter().any(|b| b.adapted().iter().any(|a| a.lora.is_some()))
    }

    /// Folds every adapter into its base weight inside `store` and drops the
    /// adapters from this brain.
    pub fn merge_adapters(&mut self, store: &mut ParamStore) -> Result<()> {
        if !self.has_adapters() {
            return Err(ModelError::AlreadyMerged);
        }
        for b in &mut self.blocks {
            for a in b.adapted_mut() {
                if let Some(l) = a.lora.take() {
                    let mut delta = store.get(l.down).matmul(store.get(l.up));
                    delta.scale_assign(l.scale);
                    store.get_mut(a.base.weight).add_assign(&delta);
                    store.set_trainable(l.down, false);
                    store.set_trainable(l.up, false);
                }
            }
        }
        Ok(())
    }

    /// Drops adapters without touching weights.
    pub fn forget_adapters(&mut self) {
        for b in &mut self.blocks {
            for a in b.adapted_mut() {
                a.lora = None;
            }
        }
    }

    /// Average-pools the feature grid into `image_tokens` cells (a square
    /// number), returning the `[image_tokens, rows*cols]` pooling matrix.
    pub fn pool_matrix(&self, rows: usize, cols: usize) -> Result<Mat> {
        let n = self.dims.image_tokens;
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(ModelError::shape("image tokens", format!("{n} is not a square number")));
        }
        if rows < side || cols < side {
            return Err(ModelError::shape("image tokens", format!("{rows}x{cols} grid cannot fill {side}x{side} cells")));
        }
        let mut m = Mat::zeros(n, rows * cols);
        for cy in 0..side {
            for cx in 0..side {
                let (y0, y1) = (cy * rows / side, (cy + 1) * rows / side);
                let (x0, x1) = (cx * cols / side, (cx + 1) * cols / side);
                let w = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        m.set(cy * side + cx, y * cols + x, w);
                    }
                }
            }
        }
        Ok(m)
    }

    /// Runs the whole token sequence with the image marker replaced by the
    /// projected image prefix.
    pub fn forward(&self, g: &mut Graph, tokens: &[usize], features: &FeatureMap) -> Result<BrainPass> {
        let markers: Vec<usize> = tokens.iter().enumerate().filter(|(_, &t)| t == IMAGE).map(|(i, _)| i).collect();
        if markers.len() != 1 {
            return Err(ModelError::ImageMarker(markers.len()));
        }
        if features.dim() != self.dims.image_dim {
            return Err(ModelError::shape("image features", format!("width {} != {}", features.dim(), self.dims.image_dim)));
        }
        let at = markers[0];
        let n_img = self.dims.image_tokens;
        let pooled = self.pool_matrix(features.rows, features.cols)?.matmul(&features.grid);
        let pooled = g.constant(pooled);
        let prefix = self.projector.forward(g, pooled);

        let embed = g.param(self.embed);
        let mut parts = Vec::with_capacity(3);
        if at > 0 {
            parts.push(g.gather_rows(embed, tokens[..at].to_vec()));
        }
        parts.push(prefix);
        if at + 1 < tokens.len() {
            parts.push(g.gather_rows(embed, tokens[at + 1..].to_vec()));
        }
        let mut x = g.concat_rows(&parts);
        let len = tokens.len() + n_img - 1;
        let pe = g.constant(sinusoid_1d(len, self.dims.dim));
        x = g.add(x, pe);

        for (i, b) in self.blocks.iter().enumerate() {
            let h = b.ln1.forward(g, x);
            let (q, k, v) = (b.q.forward(g, h), b.k.forward(g, h), b.v.forward(g, h));
            let a = attend(g, q, k, v, self.dims.heads, true);
            let a = b.o.forward(g, a);
            x = g.add(x, a);
            let h = b.ln2.forward(g, x);
            let m = b.mlp.forward(g, h);
            x = g.add(x, m);
            if !g.value(x).is_finite() {
                return Err(ModelError::NonFinite { stage: "brain", block: i });
            }
        }
        let normed = self.ln_f.forward(g, x);
        let head = g.param(self.head);
        let logits = g.matmul(normed, head);
        let positions = (0..tokens.len())
            .map(|i| match i.cmp(&at) {
                std::cmp::Ordering::Less => i,
                _ => i + n_img - 1,
            })
            .collect();
        Ok(BrainPass { logits, hidden: normed, positions })
    }

    /// The 3-layer projection `phi` from brain width to decoder width.
    pub fn project(&self, g: &mut Graph, hidden: NodeId) -> NodeId {
        self.phi.forward(g, hidden)
    }
}
