use reasontrack_core::BinaryMask;

use crate::{MetricsError, Result};

fn check_shapes(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(MetricsError::ShapeMismatch { left: a.shape(), right: b.shape() });
    }
    Ok(())
}

/// Intersection over union; two empty masks score 1.
pub fn region_similarity(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.grid().iter().zip(gt.grid()) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground pixels with at least one 4-neighbour that is background or
/// outside the grid.
pub fn boundary(mask: &BinaryMask) -> Vec<bool> {
    let (h, w) = mask.shape();
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1);
            out[y * w + x] = edge;
        }
    }
    out
}

/// Match distance in pixels: 0.8% of the image diagonal, at least 1.
pub fn boundary_tolerance(height: usize, width: usize) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    ((0.008 * diag).round() as usize).max(1)
}

/// Fraction of `from` boundary pixels lying within Euclidean distance `d`
/// of some `to` boundary pixel.
fn matched_fraction(from: &[bool], to: &[bool], h: usize, w: usize, d: usize) -> f64 {
    let d = d as isize;
    let offsets: Vec<(isize, isize)> = (-d..=d)
        .flat_map(|dy| (-d..=d).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= d * d)
        .collect();
    let mut total = 0usize;
    let mut hit = 0usize;
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !from[(y * w as isize + x) as usize] {
                continue;
            }
            total += 1;
            let found = offsets.iter().any(|&(dy, dx)| {
                let (yy, xx) = (y + dy, x + dx);
                yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize && to[(yy * w as isize + xx) as usize]
            });
            hit += usize::from(found);
        }
    }
    hit as f64 / total as f64
}

/// Boundary F-measure. Both boundaries empty scores 1, exactly one empty 0.
pub fn boundary_measure(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (h, w) = pred.shape();
    let (bp, bg) = (boundary(pred), boundary(gt));
    let (np, ng) = (bp.iter().any(|&b| b), bg.iter().any(|&b| b));
    match (np, ng) {
        (false, false) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let d = boundary_tolerance(h, w);
    let precision = matched_fraction(&bp, &bg, h, w, d);
    let recall = matched_fraction(&bg, &bp, h, w, d);
    Ok(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) })
}

/// Fraction of scores strictly above `threshold`.
pub fn recall_over_threshold(scores: &[f64], threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(MetricsError::Empty("scores"));
    }
    Ok(scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64)
}
