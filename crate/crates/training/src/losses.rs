//! Loss terms built as graph nodes so they share one backward pass.

use reasontrack_core::BinaryMask;
use reasontrack_metrics::region_similarity;
use reasontrack_nn::{Graph, Mat, NodeId};

use crate::error::{Result, TrainError};

/// Weights of the mask loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskLossWeights {
    pub bce: f64,
    pub dice: f64,
    pub eps: f64,
}

impl Default for MaskLossWeights {
    fn default() -> Self {
        Self { bce: 2.0, dice: 0.5, eps: 1.0 }
    }
}

/// Mean cross-entropy of `logits` rows against `targets`. The caller passes
/// only answer positions, so prompt positions never contribute.
pub fn text_loss(g: &mut Graph, logits: NodeId, targets: Vec<usize>) -> NodeId {
    g.cross_entropy(logits, targets)
}

fn mask_target(logits_len: usize, gt: &BinaryMask) -> Result<Mat> {
    let (h, w) = gt.shape();
    if logits_len != h * w {
        return Err(TrainError::Shape(format!("{logits_len} mask logits for a {h}x{w} target")));
    }
    Ok(Mat::from_vec(h * w, 1, gt.grid().iter().map(|&b| f64::from(u8::from(b))).collect()))
}

/// `bce·mean BCE + dice·(1 − (2Σpg + ε)/(Σp + Σg + ε))` on `[H*W, 1]` logits.
pub fn mask_loss(g: &mut Graph, logits: NodeId, gt: &BinaryMask, w: MaskLossWeights) -> Result<NodeId> {
    let target = mask_target(g.value(logits).len(), gt)?;
    let gt_sum = target.sum();
    let bce = g.bce_with_logits(logits, target.clone());
    let p = g.sigmoid(logits);
    let t = g.constant(target);
    let pg = g.mul(p, t);
    let inter = g.sum(pg);
    let num = g.scale(inter, 2.0);
    let num = g.add_scalar(num, w.eps);
    let den = g.sum(p);
    let den = g.add_scalar(den, gt_sum + w.eps);
    let ratio = g.div(num, den);
    let dice = g.scale(ratio, -1.0);
    let dice = g.add_scalar(dice, 1.0);
    let a = g.scale(bce, w.bce);
    let b = g.scale(dice, w.dice);
    Ok(g.add(a, b))
}

/// IoU between the binarized prediction and the ground truth, used as the
/// constant regression target of the purport score.
pub fn purport_target(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    region_similarity(pred, gt).map_err(|e| TrainError::Shape(e.to_string()))
}

/// `(score − target)²` with `target` a constant.
pub fn purport_loss(g: &mut Graph, score: NodeId, target: f64) -> NodeId {
    let d = g.add_scalar(score, -target);
    g.mul(d, d)
}

#[cfg(test)]
mod tests {
    use reasontrack_nn::ParamStore;

    use super::*;

    #[test]
    fn saturated_logits_give_near_zero_mask_loss() {
        let store = ParamStore::new();
        let gt = BinaryMask::from_fn(4, 4, 0, |y, x| y < 2 && x > 0);
        let mut g = Graph::new(&store);
        let l = g.constant(Mat::from_vec(16, 1, gt.grid().iter().map(|&b| if b { 20.0 } else { -20.0 }).collect()));
        let loss = mask_loss(&mut g, l, &gt, MaskLossWeights::default()).unwrap();
        assert!(g.scalar(loss) < 1e-6);

        let empty = BinaryMask::empty(4, 4, 0);
        let mut g = Graph::new(&store);
        let l = g.constant(Mat::filled(16, 1, -20.0));
        let loss = mask_loss(&mut g, l, &empty, MaskLossWeights::default()).unwrap();
        assert!(g.scalar(loss) < 1e-6);
    }

    #[test]
    fn mask_loss_rejects_wrong_size() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let l = g.constant(Mat::zeros(15, 1));
        assert!(mask_loss(&mut g, l, &BinaryMask::empty(4, 4, 0), MaskLossWeights::default()).is_err());
    }

    #[test]
    fn purport_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let s = g.constant(Mat::scalar(1.0));
        let l = purport_loss(&mut g, s, 0.0);
        assert_eq!(g.scalar(l), 1.0);
        let e = BinaryMask::empty(3, 3, 0);
        assert_eq!(purport_target(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let l = g.constant(Mat::zeros(3, 11));
        let loss = text_loss(&mut g, l, vec![0, 5, 10]);
        assert!((g.scalar(loss) - (11f64).ln()).abs() < 1e-12);
    }
}
