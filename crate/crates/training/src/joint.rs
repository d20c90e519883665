//! Teacher-forced forward pass of one training example and its joint loss.

use reasontrack_core::{BinaryMask, RunConfig};
use reasontrack_model::vocab::{PO, TK};
use reasontrack_model::{FeatureMap, TrackModel};
use reasontrack_nn::{Graph, NodeId};

use crate::error::{Result, TrainError};
use crate::losses::{mask_loss, purport_loss, purport_target, text_loss, MaskLossWeights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub text: f64,
    pub mask: f64,
    pub purport: f64,
    pub mask_terms: MaskLossWeights,
}

impl LossWeights {
    pub fn from_config(c: &RunConfig) -> Self {
        Self {
            text: c.lambda_text,
            mask: c.lambda_mask,
            purport: c.lambda_po,
            mask_terms: MaskLossWeights { bce: c.bce_weight, dice: c.dice_weight, eps: c.dice_eps },
        }
    }
}

/// Everything one example needs, with frame features already encoded.
/// The brain reads `features[0]`; the decoder visits every entry in order.
#[derive(Clone, Debug)]
pub struct ExampleInputs<'a> {
    pub features: Vec<&'a FeatureMap>,
    pub gts: Vec<&'a BinaryMask>,
    pub prompt: Vec<usize>,
    pub answer: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub text: NodeId,
    /// Mean over decoded frames.
    pub mask: NodeId,
    /// Mean over decoded frames.
    pub purport: NodeId,
}

/// Builds the joint loss for one example on `g`.
pub fn joint_loss(g: &mut Graph, model: &TrackModel, ex: &ExampleInputs, w: &LossWeights) -> Result<LossNodes> {
    if ex.features.is_empty() || ex.features.len() != ex.gts.len() {
        return Err(TrainError::Shape(format!("{} frames, {} masks", ex.features.len(), ex.gts.len())));
    }
    let find = |tok: usize| ex.answer.iter().position(|&t| t == tok);
    let (Some(tk), Some(po)) = (find(TK), find(PO)) else {
        return Err(TrainError::Shape("answer lacks <TK> or <PO>".into()));
    };

    let mut tokens = ex.prompt.clone();
    tokens.extend_from_slice(&ex.answer[..ex.answer.len() - 1]);
    let pass = model.brain.forward(g, &tokens, ex.features[0])?;
    let p = ex.prompt.len();
    let rows: Vec<usize> = (0..ex.answer.len()).map(|j| pass.positions[p - 1 + j]).collect();
    let answer_logits = g.gather_rows(pass.logits, rows);
    let text = text_loss(g, answer_logits, ex.answer.clone());

    let h = g.gather_rows(pass.hidden, vec![pass.positions[p + tk], pass.positions[p + po]]);
    let q = model.brain.project(g, h);
    let q_r = g.gather_rows(q, vec![0]);
    let q_p = g.gather_rows(q, vec![1]);
    let mut q_t = g.param(model.decoder.init_query);

    let mut mask_terms = Vec::with_capacity(ex.features.len());
    let mut po_terms = Vec::with_capacity(ex.features.len());
    for (i, (f, gt)) in ex.features.iter().zip(&ex.gts).enumerate() {
        let out = model.decoder.decode(g, f, q_r, q_p, q_t)?;
        mask_terms.push(mask_loss(g, out.logits, gt, w.mask_terms)?);
        let (hh, ww) = gt.shape();
        let pred = BinaryMask::new(hh, ww, g.value(out.logits).data().iter().map(|&l| l > 0.0).collect(), 0)
            .map_err(|e| TrainError::Shape(e.to_string()))?;
        po_terms.push(purport_loss(g, out.score, purport_target(&pred, gt)?));
        if i + 1 < ex.features.len() {
            q_t = model.decoder.propagate(g, out.q_next_raw);
        }
    }
    let n = ex.features.len() as f64;
    let mask = mean_of(g, &mask_terms, n);
    let purport = mean_of(g, &po_terms, n);

    let a = g.scale(text, w.text);
    let b = g.scale(mask, w.mask);
    let c = g.scale(purport, w.purport);
    let ab = g.add(a, b);
    let total = g.add(ab, c);
    Ok(LossNodes { total, text, mask, purport })
}

fn mean_of(g: &mut Graph, terms: &[NodeId], n: f64) -> NodeId {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    g.scale(acc, 1.0 / n)
}
