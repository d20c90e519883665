//! Query-conditioned mask decoder with two-way attention, purport scoring
//! and the online-query adapter.

use rand::Rng;
use reasontrack_nn::layers::{Attention, LayerNorm, Linear, Mlp};
use reasontrack_nn::{Graph, Mat, NodeId, ParamId, ParamStore};

use crate::encoder::FeatureMap;
use crate::error::{ModelError, Result};
use crate::pos::sinusoid_2d;

/// Rows of the token matrix fed to the decoder.
pub const MASK_SLOT: usize = 0;
pub const PURPORT_SLOT: usize = 1;
pub const REFERRING_SLOT: usize = 2;
pub const ONLINE_SLOT: usize = 3;

/// Elementwise product of the purport query with the learned iou token.
pub fn fuse_purport(q_purport: &[f64], iou_token: &[f64]) -> Result<Vec<f64>> {
    if q_purport.len() != iou_token.len() {
        return Err(ModelError::shape(
            "purport fusion",
            format!("lengths {} and {} differ", q_purport.len(), iou_token.len()),
        ));
    }
    Ok(q_purport.iter().zip(iou_token).map(|(a, b)| a * b).collect())
}

/// Row permutation turning `[cells * s*s, c]` (sub-pixels grouped per cell)
/// into row-major pixel order on the `(rows*s) x (cols*s)` grid.
pub fn pixel_shuffle_index(rows: usize, cols: usize, s: usize) -> Vec<usize> {
    let (h, w) = (rows * s, cols * s);
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            ((y / s) * cols + x / s) * s * s + (y % s) * s + x % s
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderDims {
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub patch: usize,
}

impl DecoderDims {
    fn up1_channels(&self) -> usize {
        (self.dim / 2).max(4)
    }

    fn up2_channels(&self) -> usize {
        (self.dim / 8).max(4)
    }
}

#[derive(Clone, Debug)]
struct TwoWayBlock {
    self_attn: Attention,
    ln1: LayerNorm,
    token_to_image: Attention,
    ln2: LayerNorm,
    mlp: Mlp,
    ln3: LayerNorm,
    image_to_token: Attention,
    ln4: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub dims: DecoderDims,
    pub mask_token: ParamId,
    pub iou_token: ParamId,
    pub init_query: ParamId,
    blocks: Vec<TwoWayBlock>,
    final_attn: Attention,
    final_ln: LayerNorm,
    up1: Linear,
    up2: Linear,
    hyper: Mlp,
    purport_head: Linear,
    adapter: Mlp,
}

/// Node handles of one decode.
#[derive(Clone, Copy, Debug)]
pub struct DecodeNodes {
    /// `[H*W, 1]`, row-major pixels.
    pub logits: NodeId,
    /// `[1, 1]` in `[0, 1]`.
    pub score: NodeId,
    /// `[1, dim]`, the output row of the online query.
    pub q_next_raw: NodeId,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, dims: DecoderDims, rng: &mut impl Rng) -> Self {
        let d = dims.dim;
        let h = dims.heads;
        let tok = |store: &mut ParamStore, name: &str, rng: &mut _| {
            store.add(format!("decoder.{name}"), reasontrack_nn::layers::normal_mat(rng, 1, d, 1.0), true)
        };
        let mask_token = tok(store, "mask_token", rng);
        let iou_token = tok(store, "iou_token", rng);
        let init_query = store.add("decoder.init_query", Mat::zeros(1, d), true);
        let blocks = (0..dims.blocks)
            .map(|i| {
                let n = format!("decoder.block{i}");
                TwoWayBlock {
                    self_attn: Attention::new(store, &format!("{n}.self_attn"), d, h, true, rng),
                    ln1: LayerNorm::new(store, &format!("{n}.ln1"), d, true),
                    token_to_image: Attention::new(store, &format!("{n}.token_to_image"), d, h, true, rng),
                    ln2: LayerNorm::new(store, &format!("{n}.ln2"), d, true),
                    mlp: Mlp::new(store, &format!("{n}.mlp"), &[d, 2 * d, d], true, rng),
                    ln3: LayerNorm::new(store, &format!("{n}.ln3"), d, true),
                    image_to_token: Attention::new(store, &format!("{n}.image_to_token"), d, h, true, rng),
                    ln4: LayerNorm::new(store, &format!("{n}.ln4"), d, true),
                }
            })
            .collect();
        let s2 = dims.patch / 2;
        let (c1, c2) = (dims.up1_channels(), dims.up2_channels());
        Self {
            dims,
            mask_token,
            iou_token,
            init_query,
            blocks,
            final_attn: Attention::new(store, "decoder.final_attn", d, h, true, rng),
            final_ln: LayerNorm::new(store, "decoder.final_ln", d, true),
            up1: Linear::new(store, "decoder.upscale1", d, 4 * c1, true, true, rng),
            up2: Linear::new(store, "decoder.upscale2", c1, s2 * s2 * c2, true, true, rng),
            hyper: Mlp::new(store, "decoder.hyper", &[d, d, d, c2], true, rng),
            purport_head: Linear::new(store, "decoder.purport_head", d, 1, true, true, rng),
            adapter: Mlp::new(store, "decoder.adapter", &[d, d, d, d], true, rng),
        }
    }

    pub fn adapter_params(&self) -> Vec<ParamId> {
        self.adapter.params()
    }

    /// Runs the decoder for one frame. `q_r`, `q_p`, `q_t` are `[1, dim]`.
    pub fn decode(&self, g: &mut Graph, f: &FeatureMap, q_r: NodeId, q_p: NodeId, q_t: NodeId) -> Result<DecodeNodes> {
        let d = self.dims.dim;
        if f.dim() != d || f.patch != self.dims.patch {
            return Err(ModelError::shape(
                "feature map",
                format!("width {} / patch {} do not match decoder {d} / {}", f.dim(), f.patch, self.dims.patch),
            ));
        }
        for q in [q_r, q_p, q_t] {
            if g.value(q).shape() != (1, d) {
                return Err(ModelError::shape("query", format!("{:?}, expected (1, {d})", g.value(q).shape())));
            }
            if !g.value(q).is_finite() {
                return Err(ModelError::NonFinite { stage: "decoder input", block: 0 });
            }
        }
        let mut img = g.constant(f.grid.clone());
        let pos = g.constant(sinusoid_2d(f.rows, f.cols, d));
        let iou = g.param(self.iou_token);
        let fused = g.mul(q_p, iou);
        let mask_tok = g.param(self.mask_token);
        let mut t = g.concat_rows(&[mask_tok, fused, q_r, q_t]);

        for (i, b) in self.blocks.iter().enumerate() {
            let a = b.self_attn.forward(g, t, t, t, false);
            let s = g.add(t, a);
            t = b.ln1.forward(g, s);
            let keys = g.add(img, pos);
            let a = b.token_to_image.forward(g, t, keys, img, false);
            let s = g.add(t, a);
            t = b.ln2.forward(g, s);
            let m = b.mlp.forward(g, t);
            let s = g.add(t, m);
            t = b.ln3.forward(g, s);
            let queries = g.add(img, pos);
            let a = b.image_to_token.forward(g, queries, t, t, false);
            let s = g.add(img, a);
            img = b.ln4.forward(g, s);
            if !g.value(t).is_finite() || !g.value(img).is_finite() {
                return Err(ModelError::NonFinite { stage: "decoder", block: i });
            }
        }
        let keys = g.add(img, pos);
        let a = self.final_attn.forward(g, t, keys, img, false);
        let s = g.add(t, a);
        t = self.final_ln.forward(g, s);

        let up = self.upscale(g, img, f.rows, f.cols);
        let mask_out = g.gather_rows(t, vec![MASK_SLOT]);
        let h = self.hyper.forward(g, mask_out);
        let logits = g.matmul_t(up, h);

        let po = g.gather_rows(t, vec![PURPORT_SLOT]);
        let score = self.purport_head.forward(g, po);
        let score = g.sigmoid(score);
        let q_next_raw = g.gather_rows(t, vec![ONLINE_SLOT]);
        if !g.value(logits).is_finite() || !g.value(score).is_finite() {
            return Err(ModelError::NonFinite { stage: "decoder head", block: self.blocks.len() });
        }
        Ok(DecodeNodes { logits, score, q_next_raw })
    }

    /// Two learned sub-pixel stages: x2, then x(patch/2).
    fn upscale(&self, g: &mut Graph, img: NodeId, rows: usize, cols: usize) -> NodeId {
        let (c1, c2) = (self.dims.up1_channels(), self.dims.up2_channels());
        let s2 = self.dims.patch / 2;
        let u = self.up1.forward(g, img);
        let u = g.reshape(u, rows * cols * 4, c1);
        let u = g.gather_rows(u, pixel_shuffle_index(rows, cols, 2));
        let u = g.gelu(u);
        let u = self.up2.forward(g, u);
        let u = g.reshape(u, rows * cols * 4 * s2 * s2, c2);
        let u = g.gather_rows(u, pixel_shuffle_index(rows * 2, cols * 2, s2));
        g.gelu(u)
    }

    /// The 3-layer adapter producing the next frame's online query.
    pub fn propagate(&self, g: &mut Graph, q_next_raw: NodeId) -> NodeId {
        self.adapter.forward(g, q_next_raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_index_places_subpixels() {
        // 1x2 cells, factor 2: cell 0 owns rows 0..4, cell 1 owns rows 4..8.
        let idx = pixel_shuffle_index(1, 2, 2);
        assert_eq!(idx, vec![0, 1, 4, 5, 2, 3, 6, 7]);
        let mut sorted = pixel_shuffle_index(3, 2, 4);
        sorted.sort();
        assert_eq!(sorted, (0..96).collect::<Vec<_>>());
    }

    #[test]
    fn fusion_identities() {
        let iou = [0.3, -1.2, 4.5];
        assert_eq!(fuse_purport(&[1.0; 3], &iou).unwrap(), iou.to_vec());
        assert_eq!(fuse_purport(&[0.0; 3], &iou).unwrap(), vec![0.0, -0.0, 0.0]);
        assert_eq!(fuse_purport(&[2.0, 3.0, 4.0], &iou).unwrap(), fuse_purport(&iou, &[2.0, 3.0, 4.0]).unwrap());
        assert!(fuse_purport(&[1.0; 2], &iou).is_err());
    }
}
