//! Frozen patch encoder: linear patch embedding, fixed 2-D position code,
//! then a few pre-norm self-attention blocks.

use rand::Rng;
use reasontrack_core::Frame;
use reasontrack_nn::layers::{Attention, LayerNorm, Linear, Mlp};
use reasontrack_nn::{Graph, Mat, NodeId, ParamId, ParamStore};

use crate::error::{ModelError, Result};
use crate::pos::sinusoid_2d;

/// Encoder output: one `dim`-vector per patch, row-major over the patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub grid: Mat,
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    pub frame_index: usize,
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        self.grid.cols()
    }

    /// Pixel height and width of the source frame.
    pub fn frame_shape(&self) -> (usize, usize) {
        (self.rows * self.patch, self.cols * self.patch)
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub patch: usize,
    pub dim: usize,
    embed: Linear,
    blocks: Vec<Block>,
}

impl Encoder {
    /// All parameters are created frozen.
    pub fn new(
        store: &mut ParamStore,
        patch: usize,
        dim: usize,
        blocks: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let embed = Linear::new(store, "encoder.patch_embed", patch * patch * 3, dim, true, false, rng);
        let blocks = (0..blocks)
            .map(|i| {
                let n = format!("encoder.block{i}");
                Block {
                    ln1: LayerNorm::new(store, &format!("{n}.ln1"), dim, false),
                    attn: Attention::new(store, &format!("{n}.attn"), dim, heads, false, rng),
                    ln2: LayerNorm::new(store, &format!("{n}.ln2"), dim, false),
                    mlp: Mlp::new(store, &format!("{n}.mlp"), &[dim, 2 * dim, dim], false, rng),
                }
            })
            .collect();
        Self { patch, dim, embed, blocks }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = self.embed.params();
        for b in &self.blocks {
            out.extend(b.ln1.params());
            out.extend(b.attn.params());
            out.extend(b.ln2.params());
            out.extend(b.mlp.params());
        }
        out
    }

    /// Rows are patches in row-major grid order; each row lists the patch's
    /// pixels row-major with RGB interleaved.
    pub fn patchify(&self, pixels: &[f64], height: usize, width: usize) -> Result<Mat> {
        let p = self.patch;
        if !height.is_multiple_of(p) || !width.is_multiple_of(p) {
            return Err(ModelError::shape("frame", format!("{height}x{width} is not divisible by patch size {p}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(ModelError::shape("frame", format!("{} values for {height}x{width}x3", pixels.len())));
        }
        let (gr, gc) = (height / p, width / p);
        let mut out = Mat::zeros(gr * gc, p * p * 3);
        for cy in 0..gr {
            for cx in 0..gc {
                let row = out.row_mut(cy * gc + cx);
                for dy in 0..p {
                    let src = ((cy * p + dy) * width + cx * p) * 3;
                    row[dy * p * 3..(dy + 1) * p * 3].copy_from_slice(&pixels[src..src + p * 3]);
                }
            }
        }
        Ok(out)
    }

    /// Patch embeddings plus position code, before any attention.
    pub fn embed_patches(&self, store: &ParamStore, pixels: &[f64], height: usize, width: usize) -> Result<Mat> {
        let patches = self.patchify(pixels, height, width)?;
        let mut g = Graph::inference(store);
        let x = self.embed_node(&mut g, patches, height, width);
        Ok(g.value(x).clone())
    }

    fn embed_node(&self, g: &mut Graph, patches: Mat, height: usize, width: usize) -> NodeId {
        let (gr, gc) = (height / self.patch, width / self.patch);
        let x = g.constant(patches);
        let x = self.embed.forward(g, x);
        let pe = g.constant(sinusoid_2d(gr, gc, self.dim));
        g.add(x, pe)
    }

    pub fn encode_pixels(
        &self,
        store: &ParamStore,
        pixels: &[f64],
        height: usize,
        width: usize,
        frame_index: usize,
    ) -> Result<FeatureMap> {
        let patches = self.patchify(pixels, height, width)?;
        let mut g = Graph::inference(store);
        let mut x = self.embed_node(&mut g, patches, height, width);
        for (i, b) in self.blocks.iter().enumerate() {
            let h = b.ln1.forward(&mut g, x);
            let a = b.attn.forward(&mut g, h, h, h, false);
            x = g.add(x, a);
            let h = b.ln2.forward(&mut g, x);
            let m = b.mlp.forward(&mut g, h);
            x = g.add(x, m);
            if !g.value(x).is_finite() {
                return Err(ModelError::NonFinite { stage: "encoder", block: i });
            }
        }
        Ok(FeatureMap {
            grid: g.value(x).clone(),
            rows: height / self.patch,
            cols: width / self.patch,
            patch: self.patch,
            frame_index,
        })
    }

    pub fn encode(&self, store: &ParamStore, frame: &Frame) -> Result<FeatureMap> {
        self.encode_pixels(store, frame.pixels(), frame.height(), frame.width(), frame.index())
    }
}
