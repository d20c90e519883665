use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasontrack_core::{io, load_sequence, save_sequence, AnnotatedSequence, InstructionKind, ObjectId};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SynthError};
use crate::instructions::{make_instructions, superlative_holder, Superlative};
use crate::render::render_sequence;
use crate::scene::{ChangeEvent, Color, SceneSpec, ShapeClass, ShapeSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENE_FILE: &str = "scene.json";
pub const CHANGE_SUITE: &str = "change";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenOptions {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub min_size: u32,
    pub max_size: u32,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Every object keeps at least this fraction of its full area visible
    /// in every frame.
    pub min_visible_fraction: f64,
    /// Winner/runner-up ratio an implicit superlative must reach.
    pub superlative_margin: f64,
    pub superlatives: Vec<Superlative>,
    /// Fraction of eval sequences that carry a color-change event.
    pub change_fraction: f64,
    /// Same for the training split.
    pub train_change_fraction: f64,
    pub max_attempts: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 12,
            min_shapes: 2,
            max_shapes: 4,
            min_size: 4,
            max_size: 11,
            min_speed: 0.5,
            max_speed: 3.0,
            min_visible_fraction: 0.6,
            superlative_margin: 1.3,
            superlatives: Superlative::STATIC.to_vec(),
            change_fraction: 0.25,
            train_change_fraction: 0.25,
            max_attempts: 10_000,
        }
    }
}

impl GenOptions {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidRequest(m.to_string()));
        if self.min_shapes < crate::scene::MIN_SHAPES || self.max_shapes > crate::scene::MAX_SHAPES {
            return bad("shape count range must lie within 2..=6");
        }
        if self.min_shapes > self.max_shapes || self.min_size > self.max_size || self.min_speed > self.max_speed {
            return bad("empty sampling range");
        }
        if self.superlatives.is_empty() {
            return bad("no superlatives enabled");
        }
        if !(0.0..=1.0).contains(&self.change_fraction) || !(0.0..=1.0).contains(&self.train_change_fraction) {
            return bad("change fractions must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A rendered sequence with the scene it came from.
#[derive(Clone, Debug)]
pub struct GeneratedSequence {
    pub scene: SceneSpec,
    pub sequence: AnnotatedSequence,
    pub superlative: Superlative,
    pub in_change_suite: bool,
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub seed: u64,
    pub options: GenOptions,
    pub train: Vec<GeneratedSequence>,
    pub eval: Vec<GeneratedSequence>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: String,
    pub scene_seed: u64,
    pub suites: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub options: GenOptions,
    pub sequences: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SynthError::InvalidRequest(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| {
            reasontrack_core::CoreError::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() }
                .into()
        })
    }

    /// Loads every sequence of `split` from the tree rooted at `dir`, in
    /// manifest order.
    pub fn load_split(&self, dir: &Path, split: &str) -> Result<Vec<AnnotatedSequence>> {
        self.entries(split).map(|e| Ok(load_sequence(&dir.join(split).join(&e.id))?)).collect()
    }

    /// Ids of the sequences tagged with `suite`.
    pub fn suite_ids(&self, suite: &str) -> Vec<&str> {
        self.sequences.iter().filter(|e| e.suites.iter().any(|s| s == suite)).map(|e| e.id.as_str()).collect()
    }

    pub fn entries<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.sequences.iter().filter(move |e| e.split == split)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene seed for sequence `i` of a split. Train uses even slots and eval
/// odd ones; `splitmix` is a bijection, so the two never collide.
pub fn scene_seed(seed: u64, eval: bool, i: usize) -> u64 {
    splitmix(seed.wrapping_mul(0x1_0000_0001).wrapping_add(2 * i as u64 + u64::from(eval)))
}

/// Samples a scene satisfying every generation constraint, along with the
/// superlative its implicit record will use.
pub fn sample_scene(opts: &GenOptions, seed: u64, with_event: bool) -> Result<(SceneSpec, Superlative)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..opts.max_attempts {
        let n = rng.gen_range(opts.min_shapes..=opts.max_shapes);
        let mut colors = Color::ALL.to_vec();
        colors.shuffle(&mut rng);
        let shapes: Vec<ShapeSpec> = (0..n)
            .map(|k| {
                let size = f64::from(rng.gen_range(opts.min_size..=opts.max_size));
                let speed = rng.gen_range(opts.min_speed..=opts.max_speed);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                ShapeSpec {
                    object_id: ObjectId::new(k as u32 + 1).expect("nonzero"),
                    class: ShapeClass::ALL[rng.gen_range(0..3)],
                    color: colors[k],
                    size,
                    position: (
                        rng.gen_range(size..=opts.width as f64 - size),
                        rng.gen_range(size..=opts.height as f64 - size),
                    ),
                    velocity: (speed * angle.cos(), speed * angle.sin()),
                }
            })
            .collect();
        let mut scene = SceneSpec {
            height: opts.height,
            width: opts.width,
            frames: opts.frames,
            shapes,
            events: Vec::new(),
            seed,
        };
        if scene.validate().is_err() || !visible_enough(&scene, opts.min_visible_fraction) {
            continue;
        }
        let mut sups = opts.superlatives.clone();
        sups.shuffle(&mut rng);
        let Some((sup, target)) = sups.into_iter().find_map(|s| match superlative_holder(&scene, s) {
            Some((id, ratio)) if ratio >= opts.superlative_margin => Some((s, id)),
            _ => None,
        }) else {
            continue;
        };
        if with_event {
            let lo = opts.frames / 3;
            let hi = (2 * opts.frames / 3).max(lo + 1);
            let used: Vec<Color> = scene.shapes.iter().map(|s| s.color).collect();
            let free: Vec<Color> = Color::ALL.into_iter().filter(|c| !used.contains(c)).collect();
            let color = *free.choose(&mut rng).expect("palette larger than shape count");
            scene.events.push(ChangeEvent { frame: rng.gen_range(lo..hi).max(1), object_id: target, color });
        }
        return Ok((scene, sup));
    }
    Err(SynthError::Exhausted { seed, attempts: opts.max_attempts })
}

fn visible_enough(scene: &SceneSpec, min_fraction: f64) -> bool {
    (0..scene.frames).all(|t| {
        let labels = crate::render::label_map(scene, t);
        scene.shapes.iter().enumerate().all(|(k, s)| {
            let full = crate::scene::area_at(scene, s, t);
            let visible = labels.iter().filter(|l| **l == Some(k)).count();
            full > 0 && visible as f64 >= min_fraction * full as f64
        })
    })
}

/// Renders one scene and attaches its instruction records: one explicit
/// record for every object except the implicit target (in object order),
/// then the implicit record.
pub fn build_sequence(
    opts: &GenOptions,
    seed: u64,
    id: &str,
    with_event: bool,
) -> Result<GeneratedSequence> {
    let (scene, sup) = sample_scene(opts, seed, with_event)?;
    let (target, _) = superlative_holder(&scene, sup).expect("sampled scene has a holder");
    let mut records = scene
        .shapes
        .iter()
        .map(|s| s.object_id)
        .filter(|&o| o != target)
        .map(|o| make_instructions(&scene, o, InstructionKind::Explicit, None))
        .collect::<Result<Vec<_>>>()?;
    records.push(make_instructions(&scene, target, InstructionKind::Implicit, Some(sup))?);
    let sequence = render_sequence(&scene, id)?.with_instructions(records)?;
    Ok(GeneratedSequence { scene, sequence, superlative: sup, in_change_suite: with_event })
}

fn pick_changed(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = (n as f64 * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut flags = vec![false; n];
    for &i in &idx[..k.min(n)] {
        flags[i] = true;
    }
    flags
}

pub fn sequence_name(split: &str, i: usize) -> String {
    format!("{split}_{i:05}")
}

pub fn generate_benchmark(n_train: usize, n_eval: usize, seed: u64, opts: &GenOptions) -> Result<Benchmark> {
    if n_train == 0 || n_eval == 0 {
        return Err(SynthError::InvalidRequest(format!(
            "need at least one sequence per split, got train={n_train} eval={n_eval}"
        )));
    }
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x00C4_A6E5));
    let train_changed = pick_changed(n_train, opts.train_change_fraction, &mut rng);
    let eval_changed = pick_changed(n_eval, opts.change_fraction, &mut rng);
    let build = |eval: bool, flags: &[bool]| -> Result<Vec<GeneratedSequence>> {
        let split = if eval { "eval" } else { "train" };
        flags
            .iter()
            .enumerate()
            .map(|(i, &ev)| build_sequence(opts, scene_seed(seed, eval, i), &sequence_name(split, i), ev))
            .collect()
    };
    Ok(Benchmark {
        seed,
        options: opts.clone(),
        train: build(false, &train_changed)?,
        eval: build(true, &eval_changed)?,
    })
}

impl Benchmark {
    pub fn manifest(&self) -> Manifest {
        let entry = |split: &str, g: &GeneratedSequence| ManifestEntry {
            id: g.sequence.sequence_id().to_string(),
            split: split.to_string(),
            scene_seed: g.scene.seed,
            suites: if g.in_change_suite { vec![CHANGE_SUITE.to_string()] } else { Vec::new() },
        };
        let sequences = self
            .train
            .iter()
            .map(|g| entry("train", g))
            .chain(self.eval.iter().map(|g| entry("eval", g)))
            .collect();
        Manifest { seed: self.seed, options: self.options.clone(), sequences }
    }

    /// Writes `<dir>/<split>/<id>/…` for every sequence (plus its
    /// `scene.json`) and `<dir>/manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (split, list) in [("train", &self.train), ("eval", &self.eval)] {
            for g in list {
                let seq_dir = dir.join(split).join(g.sequence.sequence_id());
                save_sequence(&g.sequence, &seq_dir)?;
                let scene = serde_json::to_string_pretty(&g.scene).expect("scene serializes") + "\n";
                io::write_file(&seq_dir.join(SCENE_FILE), scene.as_bytes())?;
            }
        }
        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes") + "\n";
        io::write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
        Ok(())
    }
}
