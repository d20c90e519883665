use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Smallest frame side accepted for stored or generated video.
pub const MIN_FRAME_SIDE: usize = 16;

/// Number of rephrasings that accompany each seed instruction.
pub const REPHRASINGS_PER_RECORD: usize = 5;

/// 1-based object identifier; 0 is reserved for background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(u32);

impl ObjectId {
    pub fn new(id: u32) -> Result<Self> {
        if id == 0 {
            return Err(CoreError::invalid("object id", "0 is reserved for background"));
        }
        Ok(Self(id))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// An RGB frame with channel values in `[0, 1]`, stored row-major as
/// `[y][x][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    index: usize,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, index: usize) -> Result<Self> {
        if height < MIN_FRAME_SIDE || width < MIN_FRAME_SIDE {
            return Err(CoreError::invalid(
                "frame",
                format!("{height}x{width} is smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"),
            ));
        }
        if pixels.len() != height * width * 3 {
            return Err(CoreError::invalid(
                "frame",
                format!("expected {} values for {height}x{width}x3, got {}", height * width * 3, pixels.len()),
            ));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::invalid("frame", format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels, index })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }
}

/// Boolean segmentation grid for one frame, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    grid: Vec<bool>,
    frame_index: usize,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, grid: Vec<bool>, frame_index: usize) -> Result<Self> {
        if grid.len() != height * width {
            return Err(CoreError::invalid(
                "mask",
                format!("expected {} cells for {height}x{width}, got {}", height * width, grid.len()),
            ));
        }
        Ok(Self { height, width, grid, frame_index })
    }

    pub fn empty(height: usize, width: usize, frame_index: usize) -> Self {
        Self { height, width, grid: vec![false; height * width], frame_index }
    }

    pub fn from_fn(height: usize, width: usize, frame_index: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut grid = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                grid.push(f(y, x));
            }
        }
        Self { height, width, grid, frame_index }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.grid[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.grid[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.grid.iter().any(|&b| b)
    }

    pub fn with_frame_index(mut self, frame_index: usize) -> Self {
        self.frame_index = frame_index;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionKind {
    Explicit,
    Implicit,
}

/// One seed instruction plus its rephrasings, all naming the same target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstructionRecord {
    seed_text: String,
    rephrasings: Vec<String>,
    kind: InstructionKind,
    target_object_id: ObjectId,
}

impl InstructionRecord {
    pub fn new(
        seed_text: impl Into<String>,
        rephrasings: Vec<String>,
        kind: InstructionKind,
        target_object_id: ObjectId,
    ) -> Result<Self> {
        if rephrasings.len() != REPHRASINGS_PER_RECORD {
            return Err(CoreError::invalid(
                "instruction record",
                format!("expected {REPHRASINGS_PER_RECORD} rephrasings, got {}", rephrasings.len()),
            ));
        }
        Ok(Self { seed_text: seed_text.into(), rephrasings, kind, target_object_id })
    }

    pub fn seed_text(&self) -> &str {
        &self.seed_text
    }

    pub fn rephrasings(&self) -> &[String] {
        &self.rephrasings
    }

    pub fn kind(&self) -> InstructionKind {
        self.kind
    }

    pub fn target(&self) -> ObjectId {
        self.target_object_id
    }

    /// The seed followed by the rephrasings (always six strings).
    pub fn instructions(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.seed_text.as_str()).chain(self.rephrasings.iter().map(String::as_str))
    }
}

/// A video with per-object ground truth and its instruction records.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedSequence {
    sequence_id: String,
    frames: Vec<Frame>,
    gt_masks: BTreeMap<ObjectId, Vec<BinaryMask>>,
    instructions: Vec<InstructionRecord>,
}

impl AnnotatedSequence {
    /// Validates and assembles a sequence. Frame and mask indices are
    /// renumbered to their position in the list.
    pub fn new(
        sequence_id: impl Into<String>,
        frames: Vec<Frame>,
        gt_masks: BTreeMap<ObjectId, Vec<BinaryMask>>,
        instructions: Vec<InstructionRecord>,
    ) -> Result<Self> {
        let sequence_id = sequence_id.into();
        if frames.len() < 2 {
            return Err(CoreError::invalid("sequence", format!("needs at least 2 frames, got {}", frames.len())));
        }
        let (h, w) = (frames[0].height(), frames[0].width());
        for (i, f) in frames.iter().enumerate() {
            if (f.height(), f.width()) != (h, w) {
                return Err(CoreError::CorruptSequence {
                    index: i,
                    reason: format!("frame is {}x{}, expected {h}x{w}", f.height(), f.width()),
                });
            }
        }
        for (id, masks) in &gt_masks {
            if masks.len() != frames.len() {
                let index = masks.len().min(frames.len());
                return Err(CoreError::CorruptSequence {
                    index,
                    reason: format!("object {id} has {} masks for {} frames", masks.len(), frames.len()),
                });
            }
            for (i, m) in masks.iter().enumerate() {
                if m.shape() != (h, w) {
                    return Err(CoreError::CorruptSequence {
                        index: i,
                        reason: format!("mask of object {id} is {:?}, expected {h}x{w}", m.shape()),
                    });
                }
            }
        }
        for rec in &instructions {
            let target = rec.target();
            let masks = gt_masks.get(&target).ok_or_else(|| {
                CoreError::invalid("instruction record", format!("target object {target} has no masks"))
            })?;
            if masks[0].is_empty() {
                return Err(CoreError::invalid(
                    "instruction record",
                    format!("target object {target} is not visible in frame 0"),
                ));
            }
        }
        let frames = frames.into_iter().enumerate().map(|(i, f)| f.with_index(i)).collect();
        let gt_masks = gt_masks
            .into_iter()
            .map(|(id, ms)| (id, ms.into_iter().enumerate().map(|(i, m)| m.with_frame_index(i)).collect()))
            .collect();
        Ok(Self { sequence_id, frames, gt_masks, instructions })
    }

    pub fn sequence_id(&self) -> &str {
        &self.sequence_id
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn gt_masks(&self) -> &BTreeMap<ObjectId, Vec<BinaryMask>> {
        &self.gt_masks
    }

    pub fn masks_of(&self, id: ObjectId) -> Option<&[BinaryMask]> {
        self.gt_masks.get(&id).map(Vec::as_slice)
    }

    pub fn instructions(&self) -> &[InstructionRecord] {
        &self.instructions
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        (self.frames[0].height(), self.frames[0].width())
    }

    /// Replaces the instruction records, re-running validation.
    pub fn with_instructions(self, instructions: Vec<InstructionRecord>) -> Result<Self> {
        Self::new(self.sequence_id, self.frames, self.gt_masks, instructions)
    }
}
