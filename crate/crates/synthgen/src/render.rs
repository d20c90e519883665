use std::collections::BTreeMap;

use reasontrack_core::{AnnotatedSequence, BinaryMask, Frame};

use crate::error::Result;
use crate::scene::{rasterize, SceneSpec, BACKGROUND};

/// Per-pixel index (into `scene.shapes`) of the front-most shape at frame `t`.
pub fn label_map(scene: &SceneSpec, t: usize) -> Vec<Option<usize>> {
    let mut labels = vec![None; scene.height * scene.width];
    for (k, shape) in scene.shapes.iter().enumerate() {
        for (cell, covered) in labels.iter_mut().zip(rasterize(scene, shape, t)) {
            if covered {
                *cell = Some(k);
            }
        }
    }
    labels
}

/// Draws every frame and the visible mask of every object. The result has
/// no instruction records yet.
pub fn render_sequence(scene: &SceneSpec, sequence_id: &str) -> Result<AnnotatedSequence> {
    scene.validate()?;
    let (h, w) = (scene.height, scene.width);
    let bg = BACKGROUND.map(|c| f64::from(c) / 255.0);
    let mut frames = Vec::with_capacity(scene.frames);
    let mut masks: BTreeMap<_, Vec<BinaryMask>> = BTreeMap::new();
    for t in 0..scene.frames {
        let labels = label_map(scene, t);
        let colors: Vec<[f64; 3]> = scene.shapes.iter().map(|s| scene.color_at(s, t).rgb()).collect();
        let mut pixels = Vec::with_capacity(h * w * 3);
        for l in &labels {
            pixels.extend_from_slice(&l.map_or(bg, |k| colors[k]));
        }
        frames.push(Frame::new(h, w, pixels, t)?);
        for (k, s) in scene.shapes.iter().enumerate() {
            let grid = labels.iter().map(|l| *l == Some(k)).collect();
            masks.entry(s.object_id).or_default().push(BinaryMask::new(h, w, grid, t)?);
        }
    }
    Ok(AnnotatedSequence::new(sequence_id, frames, masks, Vec::new())?)
}
