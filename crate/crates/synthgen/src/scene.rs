use std::fmt;

use reasontrack_core::ObjectId;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SynthError};

pub const MIN_RADIUS: f64 = 2.0;
pub const MIN_SHAPES: usize = 2;
pub const MAX_SHAPES: usize = 6;

/// Background color of every canvas, in 8-bit units.
pub const BACKGROUND: [u8; 3] = [16, 16, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Circle,
    Square,
    Triangle,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 3] = [ShapeClass::Circle, ShapeClass::Square, ShapeClass::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Circle => "circle",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Named palette entries. Colors are exact multiples of 1/255 so they
/// survive the PNG round trip unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
    Cyan,
    White,
}

impl Color {
    pub const ALL: [Color; 8] =
        [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Purple, Color::Orange, Color::Cyan, Color::White];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
            Color::Cyan => "cyan",
            Color::White => "white",
        }
    }

    pub fn rgb8(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 200, 60],
            Color::Blue => [50, 90, 230],
            Color::Yellow => [230, 210, 40],
            Color::Purple => [160, 60, 200],
            Color::Orange => [240, 140, 30],
            Color::Cyan => [40, 210, 210],
            Color::White => [235, 235, 235],
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        self.rgb8().map(|c| f64::from(c) / 255.0)
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub object_id: ObjectId,
    pub class: ShapeClass,
    pub color: Color,
    /// Radius (circle), half side (square) or half base (triangle), in pixels.
    pub size: f64,
    /// Center at frame 0 as (x, y).
    pub position: (f64, f64),
    /// Pixels per frame as (dx, dy).
    pub velocity: (f64, f64),
}

impl ShapeSpec {
    pub fn speed(&self) -> f64 {
        self.velocity.0.hypot(self.velocity.1)
    }
}

/// From frame `frame` onwards, `object_id` is drawn in `color`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub frame: usize,
    pub object_id: ObjectId,
    pub color: Color,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Back to front: later shapes occlude earlier ones.
    pub shapes: Vec<ShapeSpec>,
    pub events: Vec<ChangeEvent>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(SynthError::InvalidScene(reason));
        if self.height < reasontrack_core::MIN_FRAME_SIDE || self.width < reasontrack_core::MIN_FRAME_SIDE {
            return bad(format!("canvas {}x{} is too small", self.height, self.width));
        }
        if self.frames < 2 {
            return bad(format!("{} frames, need at least 2", self.frames));
        }
        if !(MIN_SHAPES..=MAX_SHAPES).contains(&self.shapes.len()) {
            return bad(format!("{} shapes, need {MIN_SHAPES} to {MAX_SHAPES}", self.shapes.len()));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if self.shapes[..i].iter().any(|o| o.object_id == s.object_id) {
                return bad(format!("duplicate object id {}", s.object_id));
            }
            if s.size.is_nan() || s.size < MIN_RADIUS {
                return bad(format!("object {} has size {} below {MIN_RADIUS}", s.object_id, s.size));
            }
            if 2.0 * s.size >= self.width.min(self.height) as f64 {
                return bad(format!("object {} of size {} does not fit the canvas", s.object_id, s.size));
            }
            let (x, y) = s.position;
            let ok = |v: f64, hi: usize| v >= s.size && v <= hi as f64 - s.size;
            if !ok(x, self.width) || !ok(y, self.height) {
                return bad(format!("object {} starts outside the canvas", s.object_id));
            }
            if !(s.velocity.0.is_finite() && s.velocity.1.is_finite()) {
                return bad(format!("object {} has a non-finite velocity", s.object_id));
            }
        }
        for e in &self.events {
            if e.frame >= self.frames {
                return bad(format!("event at frame {} beyond {} frames", e.frame, self.frames));
            }
            if !self.shapes.iter().any(|s| s.object_id == e.object_id) {
                return bad(format!("event names unknown object {}", e.object_id));
            }
        }
        Ok(())
    }

    pub fn shape(&self, id: ObjectId) -> Option<&ShapeSpec> {
        self.shapes.iter().find(|s| s.object_id == id)
    }

    /// Color of `shape` at frame `t` after applying events in order.
    pub fn color_at(&self, shape: &ShapeSpec, t: usize) -> Color {
        self.events
            .iter()
            .filter(|e| e.object_id == shape.object_id && e.frame <= t)
            .max_by_key(|e| e.frame)
            .map_or(shape.color, |e| e.color)
    }

    /// Center of `shape` at frame `t` under the bounce model.
    pub fn center_at(&self, shape: &ShapeSpec, t: usize) -> (f64, f64) {
        let x = bounce(shape.position.0, shape.velocity.0, t as f64, shape.size, self.width as f64 - shape.size);
        let y = bounce(shape.position.1, shape.velocity.1, t as f64, shape.size, self.height as f64 - shape.size);
        (x, y)
    }
}

/// Position along one axis of a point moving at `v` from `p0`, reflecting
/// off the walls `lo` and `hi`.
pub fn bounce(p0: f64, v: f64, t: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let period = 2.0 * span;
    let u = (p0 - lo + v * t).rem_euclid(period);
    lo + if u > span { period - u } else { u }
}

/// Whether the pixel with center `(px, py)` is covered by a shape of the
/// given class, center and size.
pub fn covers(class: ShapeClass, (cx, cy): (f64, f64), r: f64, px: f64, py: f64) -> bool {
    let (dx, dy) = (px - cx, py - cy);
    match class {
        ShapeClass::Circle => dx * dx + dy * dy <= r * r,
        ShapeClass::Square => dx.abs() <= r && dy.abs() <= r,
        // apex (cx, cy - r), base corners (cx ± r, cy + r)
        ShapeClass::Triangle => dy <= r && dy >= -r && dx.abs() <= (dy + r) / 2.0,
    }
}

/// Full (unoccluded) coverage of `shape` at frame `t`, row-major.
pub fn rasterize(scene: &SceneSpec, shape: &ShapeSpec, t: usize) -> Vec<bool> {
    let c = scene.center_at(shape, t);
    let mut out = Vec::with_capacity(scene.height * scene.width);
    for y in 0..scene.height {
        for x in 0..scene.width {
            out.push(covers(shape.class, c, shape.size, x as f64 + 0.5, y as f64 + 0.5));
        }
    }
    out
}

pub fn area_at(scene: &SceneSpec, shape: &ShapeSpec, t: usize) -> usize {
    rasterize(scene, shape, t).into_iter().filter(|&b| b).count()
}
