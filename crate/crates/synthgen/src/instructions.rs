use std::collections::BTreeSet;
use std::fmt;

use reasontrack_core::{InstructionKind, InstructionRecord, ObjectId};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SynthError};
use crate::scene::{area_at, Color, SceneSpec, ShapeClass};

/// Whole-sequence attributes that implicit instructions refer to.
/// Size is the rasterized area at frame 0; speed is the constant
/// per-frame displacement magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Superlative {
    Largest,
    Smallest,
    Fastest,
    Slowest,
}

impl Superlative {
    pub const ALL: [Superlative; 4] =
        [Superlative::Largest, Superlative::Smallest, Superlative::Fastest, Superlative::Slowest];

    /// Superlatives decidable from a single frame.
    pub const STATIC: [Superlative; 2] = [Superlative::Largest, Superlative::Smallest];

    fn templates(self) -> [&'static str; 6] {
        match self {
            Superlative::Largest => [
                "the largest shape",
                "the biggest object",
                "the object with the largest area",
                "the shape that covers the most area",
                "the largest object in the video",
                "the biggest shape of all",
            ],
            Superlative::Smallest => [
                "the smallest shape",
                "the tiniest object",
                "the object with the smallest area",
                "the shape that covers the least area",
                "the smallest object in the video",
                "the tiniest shape of all",
            ],
            Superlative::Fastest => [
                "the object moving the fastest",
                "the fastest object",
                "the quickest shape",
                "the shape that moves the fastest",
                "the fastest moving object in the video",
                "the quickest object of all",
            ],
            Superlative::Slowest => [
                "the object moving the slowest",
                "the slowest object",
                "the most sluggish shape",
                "the shape that moves the slowest",
                "the slowest moving object in the video",
                "the most sluggish object of all",
            ],
        }
    }
}

impl fmt::Display for Superlative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.templates()[0])
    }
}

const EXPLICIT_TEMPLATES: [&str; 6] = [
    "the {c} {s}",
    "the {s} that is {c}",
    "the {c} colored {s}",
    "the {s} colored {c}",
    "the {c} {s} in the video",
    "the {s} with {c} color",
];

fn explicit_text(template: &str, color: Color, class: ShapeClass) -> String {
    template.replace("{c}", color.name()).replace("{s}", class.name())
}

fn attribute(scene: &SceneSpec, sup: Superlative) -> Vec<(ObjectId, f64)> {
    scene
        .shapes
        .iter()
        .map(|s| {
            let v = match sup {
                Superlative::Largest | Superlative::Smallest => area_at(scene, s, 0) as f64,
                Superlative::Fastest | Superlative::Slowest => s.speed(),
            };
            (s.object_id, v)
        })
        .collect()
}

/// The unique holder of `sup` together with the ratio between the winning
/// value and the runner-up (always ≥ 1; larger means easier). `None` on ties.
pub fn superlative_holder(scene: &SceneSpec, sup: Superlative) -> Option<(ObjectId, f64)> {
    let mut vals = attribute(scene, sup);
    let smallest_wins = matches!(sup, Superlative::Smallest | Superlative::Slowest);
    vals.sort_by(|a, b| if smallest_wins { a.1.total_cmp(&b.1) } else { b.1.total_cmp(&a.1) });
    let (best, second) = (vals.first()?, vals.get(1)?);
    if best.1 == second.1 {
        return None;
    }
    let ratio = if smallest_wins { second.1 / best.1.max(f64::MIN_POSITIVE) } else { best.1 / second.1.max(f64::MIN_POSITIVE) };
    Some((best.0, ratio))
}

/// Builds the seed instruction and five rephrasings naming `target`.
///
/// Explicit records describe color and class as seen at frame 0 and require
/// that pair to be unique in the scene. Implicit records use `superlative`,
/// or the first superlative (in [`Superlative::ALL`] order) that `target`
/// uniquely holds when `None`.
pub fn make_instructions(
    scene: &SceneSpec,
    target: ObjectId,
    kind: InstructionKind,
    superlative: Option<Superlative>,
) -> Result<InstructionRecord> {
    let shape = scene.shape(target).ok_or(SynthError::UnknownObject(target))?;
    let texts: Vec<String> = match kind {
        InstructionKind::Explicit => {
            let color = scene.color_at(shape, 0);
            let twins = scene.shapes.iter().filter(|s| s.class == shape.class && scene.color_at(s, 0) == color).count();
            if twins != 1 {
                return Err(SynthError::InvalidScene(format!(
                    "\"{color} {}\" matches {twins} objects",
                    shape.class
                )));
            }
            EXPLICIT_TEMPLATES.iter().map(|t| explicit_text(t, color, shape.class)).collect()
        }
        InstructionKind::Implicit => {
            let sup = match superlative {
                Some(sup) => {
                    match superlative_holder(scene, sup) {
                        Some((id, _)) if id == target => {}
                        _ => return Err(SynthError::Ambiguous { superlative: sup, target }),
                    }
                    sup
                }
                None => Superlative::ALL
                    .into_iter()
                    .find(|&s| superlative_holder(scene, s).is_some_and(|(id, _)| id == target))
                    .ok_or(SynthError::NoSuperlative(target))?,
            };
            sup.templates().iter().map(|s| s.to_string()).collect()
        }
    };
    let mut texts = texts.into_iter();
    let seed = texts.next().expect("six templates");
    Ok(InstructionRecord::new(seed, texts.collect(), kind, target)?)
}

/// Every word any instruction template can produce, sorted.
pub fn lexicon() -> Vec<String> {
    let mut words = BTreeSet::new();
    let mut add = |text: &str| words.extend(text.split_whitespace().map(str::to_string));
    for t in EXPLICIT_TEMPLATES {
        for c in Color::ALL {
            for s in ShapeClass::ALL {
                add(&explicit_text(t, c, s));
            }
        }
    }
    for sup in Superlative::ALL {
        for t in sup.templates() {
            add(t);
        }
    }
    words.into_iter().collect()
}
