use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use reasontrack_core::{load_sequence, InstructionKind, ObjectId};
use reasontrack_synthgen::*;

fn oid(k: u32) -> ObjectId {
    ObjectId::new(k).unwrap()
}

fn shape(k: u32, class: ShapeClass, color: Color, size: f64, pos: (f64, f64), vel: (f64, f64)) -> ShapeSpec {
    ShapeSpec { object_id: oid(k), class, color, size, position: pos, velocity: vel }
}

fn scene(shapes: Vec<ShapeSpec>, frames: usize) -> SceneSpec {
    SceneSpec { height: 64, width: 64, frames, shapes, events: vec![], seed: 1 }
}

/// Steps the motion frame by frame, reflecting at the walls.
fn simulate(s: &ShapeSpec, w: f64, h: f64, t: usize) -> (f64, f64) {
    let (mut x, mut y) = s.position;
    let (mut vx, mut vy) = s.velocity;
    let r = s.size;
    for _ in 0..t {
        x += vx;
        y += vy;
        for (p, v, hi) in [(&mut x, &mut vx, w - r), (&mut y, &mut vy, h - r)] {
            loop {
                if *p > hi {
                    *p = 2.0 * hi - *p;
                    *v = -*v;
                } else if *p < r {
                    *p = 2.0 * r - *p;
                    *v = -*v;
                } else {
                    break;
                }
            }
        }
    }
    (x, y)
}

/// Same-side test against the three triangle edges; circles and squares by
/// their defining inequalities.
fn inside(s: &ShapeSpec, c: (f64, f64), px: f64, py: f64) -> bool {
    let r = s.size;
    match s.class {
        ShapeClass::Circle => (px - c.0).powi(2) + (py - c.1).powi(2) <= r * r,
        ShapeClass::Square => px >= c.0 - r && px <= c.0 + r && py >= c.1 - r && py <= c.1 + r,
        ShapeClass::Triangle => {
            let v = [(c.0, c.1 - r), (c.0 + r, c.1 + r), (c.0 - r, c.1 + r)];
            let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
            let e = [edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0])];
            e.iter().all(|&d| d >= -1e-9) || e.iter().all(|&d| d <= 1e-9)
        }
    }
}

fn oracle_visible_mask(sc: &SceneSpec, k: usize, t: usize) -> Vec<bool> {
    let (w, h) = (sc.width as f64, sc.height as f64);
    let centers: Vec<_> = sc.shapes.iter().map(|s| simulate(s, w, h, t)).collect();
    let mut out = Vec::new();
    for y in 0..sc.height {
        for x in 0..sc.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mine = inside(&sc.shapes[k], centers[k], px, py);
            let hidden = (k + 1..sc.shapes.len()).any(|j| inside(&sc.shapes[j], centers[j], px, py));
            out.push(mine && !hidden);
        }
    }
    out
}

#[test]
fn static_circle_pixel_count() {
    let sc = scene(
        vec![
            shape(1, ShapeClass::Circle, Color::Red, 4.0, (32.0, 32.0), (0.0, 0.0)),
            shape(2, ShapeClass::Square, Color::Blue, 2.0, (4.0, 4.0), (0.0, 0.0)),
        ],
        4,
    );
    let seq = render_sequence(&sc, "c").unwrap();
    let masks = seq.masks_of(oid(1)).unwrap();
    assert_eq!(masks.len(), 4);
    let brute = (0..64 * 64)
        .filter(|i| {
            let (x, y) = ((i % 64) as f64 + 0.5, (i / 64) as f64 + 0.5);
            (x - 32.0).powi(2) + (y - 32.0).powi(2) <= 16.0
        })
        .count();
    assert_eq!(brute, 52);
    for m in masks {
        assert_eq!(m.count(), brute);
        assert_eq!(m, &masks[0].clone().with_frame_index(m.frame_index()));
    }
}

#[test]
fn disjoint_shapes_have_disjoint_masks() {
    let sc = scene(
        vec![
            shape(1, ShapeClass::Triangle, Color::Green, 6.0, (10.0, 10.0), (0.0, 0.0)),
            shape(2, ShapeClass::Square, Color::Yellow, 6.0, (50.0, 50.0), (0.0, 0.0)),
        ],
        3,
    );
    let seq = render_sequence(&sc, "d").unwrap();
    for t in 0..3 {
        let a = &seq.masks_of(oid(1)).unwrap()[t];
        let b = &seq.masks_of(oid(2)).unwrap()[t];
        assert!(a.grid().iter().zip(b.grid()).all(|(x, y)| !(*x && *y)));
        assert!(a.count() > 0 && b.count() > 0);
    }
}

#[test]
fn invalid_scenes_are_rejected() {
    let one = scene(vec![shape(1, ShapeClass::Circle, Color::Red, 4.0, (32.0, 32.0), (0.0, 0.0))], 4);
    assert!(render_sequence(&one, "x").is_err());
    let tiny = scene(
        vec![
            shape(1, ShapeClass::Circle, Color::Red, 1.0, (32.0, 32.0), (0.0, 0.0)),
            shape(2, ShapeClass::Circle, Color::Blue, 4.0, (10.0, 10.0), (0.0, 0.0)),
        ],
        4,
    );
    assert!(render_sequence(&tiny, "x").is_err());
}

#[test]
fn explicit_and_implicit_templates() {
    let sc = scene(
        vec![
            shape(1, ShapeClass::Triangle, Color::Blue, 5.0, (15.0, 15.0), (1.0, 0.0)),
            shape(2, ShapeClass::Square, Color::Red, 5.0, (45.0, 45.0), (2.5, 1.0)),
            shape(3, ShapeClass::Circle, Color::Green, 3.0, (15.0, 45.0), (0.5, 0.0)),
        ],
        6,
    );
    let rec = make_instructions(&sc, oid(1), InstructionKind::Explicit, None).unwrap();
    assert_eq!(rec.seed_text(), "the blue triangle");
    assert_eq!(rec.rephrasings().len(), 5);

    let rec = make_instructions(&sc, oid(2), InstructionKind::Implicit, Some(Superlative::Fastest)).unwrap();
    assert_eq!(rec.seed_text(), "the object moving the fastest");
    assert_eq!(rec.kind(), InstructionKind::Implicit);
    assert_eq!(rec.instructions().collect::<BTreeSet<_>>().len(), 6);

    assert!(make_instructions(&sc, oid(1), InstructionKind::Implicit, Some(Superlative::Fastest)).is_err());
}

#[test]
fn tied_largest_is_ambiguous() {
    let sc = scene(
        vec![
            shape(1, ShapeClass::Square, Color::Blue, 5.0, (15.0, 15.0), (1.0, 0.0)),
            shape(2, ShapeClass::Square, Color::Red, 5.0, (45.0, 45.0), (2.0, 0.0)),
        ],
        4,
    );
    assert!(matches!(
        make_instructions(&sc, oid(1), InstructionKind::Implicit, Some(Superlative::Largest)),
        Err(SynthError::Ambiguous { .. })
    ));
}

#[test]
fn lexicon_covers_every_template() {
    let lex: BTreeSet<String> = lexicon().into_iter().collect();
    let bench = generate_benchmark(6, 3, 11, &GenOptions::default()).unwrap();
    for g in bench.train.iter().chain(&bench.eval) {
        for rec in g.sequence.instructions() {
            for text in rec.instructions() {
                assert!(text.starts_with("the "), "{text}");
                for w in text.split_whitespace() {
                    assert!(lex.contains(w), "{w} missing");
                }
            }
        }
    }
}

#[test]
fn benchmark_counts_and_change_suite() {
    let bench = generate_benchmark(64, 16, 7, &GenOptions::default()).unwrap();
    assert_eq!(bench.train.len(), 64);
    assert_eq!(bench.eval.len(), 16);
    let changed = bench.eval.iter().filter(|g| g.in_change_suite).count();
    assert_eq!(changed, 4);
    let manifest = bench.manifest();
    assert_eq!(manifest.sequences.iter().filter(|e| e.suites.iter().any(|s| s == CHANGE_SUITE)).count(), 4 + 16);

    let train_seeds: BTreeSet<u64> = bench.train.iter().map(|g| g.scene.seed).collect();
    let eval_seeds: BTreeSet<u64> = bench.eval.iter().map(|g| g.scene.seed).collect();
    assert_eq!(train_seeds.len(), 64);
    assert!(train_seeds.is_disjoint(&eval_seeds));

    for g in &bench.eval {
        let (implicit, explicit) = g.sequence.instructions().split_last().unwrap();
        assert_eq!(implicit.kind(), InstructionKind::Implicit);
        assert_eq!(explicit.len(), g.scene.shapes.len() - 1);
        for e in explicit {
            assert_eq!(e.kind(), InstructionKind::Explicit);
            assert_ne!(e.target(), implicit.target());
        }
        if g.in_change_suite {
            assert_eq!(g.scene.events.len(), 1);
            assert_eq!(g.scene.events[0].object_id, implicit.target());
            let used: Vec<Color> = g.scene.shapes.iter().map(|s| s.color).collect();
            assert!(!used.contains(&g.scene.events[0].color));
        } else {
            assert!(g.scene.events.is_empty());
        }
    }
}

#[test]
fn empty_split_is_an_error() {
    assert!(matches!(generate_benchmark(0, 4, 1, &GenOptions::default()), Err(SynthError::InvalidRequest(_))));
}

#[test]
fn masks_match_brute_force_rerasterization() {
    let bench = generate_benchmark(12, 4, 3, &GenOptions::default()).unwrap();
    for g in bench.train.iter().chain(&bench.eval) {
        for (k, s) in g.scene.shapes.iter().enumerate() {
            for (t, m) in g.sequence.masks_of(s.object_id).unwrap().iter().enumerate() {
                assert_eq!(m.grid(), oracle_visible_mask(&g.scene, k, t).as_slice(), "{} obj {k} t {t}", g.scene.seed);
            }
        }
    }
}

#[test]
fn implicit_instructions_are_answerable() {
    let bench = generate_benchmark(20, 8, 5, &GenOptions::default()).unwrap();
    for g in bench.train.iter().chain(&bench.eval) {
        let rec = g.sequence.instructions().last().unwrap();
        let areas: Vec<(ObjectId, usize)> =
            g.scene.shapes.iter().map(|s| (s.object_id, oracle_visible_mask_full_area(&g.scene, s))).collect();
        let best = match g.superlative {
            Superlative::Largest => areas.iter().map(|a| a.1).max().unwrap(),
            Superlative::Smallest => areas.iter().map(|a| a.1).min().unwrap(),
            _ => unreachable!("default options use size superlatives"),
        };
        let holders: Vec<_> = areas.iter().filter(|a| a.1 == best).collect();
        assert_eq!(holders.len(), 1);
        assert_eq!(holders[0].0, rec.target());
    }
}

fn oracle_visible_mask_full_area(sc: &SceneSpec, s: &ShapeSpec) -> usize {
    (0..sc.height * sc.width)
        .filter(|i| inside(s, s.position, (i % sc.width) as f64 + 0.5, (i / sc.width) as f64 + 0.5))
        .count()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            stack.extend(fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()));
        } else {
            out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn written_trees_are_byte_identical_and_reload() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = GenOptions::default();
    generate_benchmark(3, 2, 9, &opts).unwrap().write(&tmp.path().join("a")).unwrap();
    generate_benchmark(3, 2, 9, &opts).unwrap().write(&tmp.path().join("b")).unwrap();
    assert_eq!(tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));

    let bench = generate_benchmark(3, 2, 9, &opts).unwrap();
    let back = load_sequence(&tmp.path().join("a/eval/eval_00001")).unwrap();
    assert_eq!(back, bench.eval[1].sequence);
    let manifest = Manifest::load(&tmp.path().join("a").join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest, bench.manifest());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_seed_same_sequence(seed in any::<u64>()) {
        let opts = GenOptions::default();
        let a = build_sequence(&opts, seed, "s", seed % 2 == 0).unwrap();
        let b = build_sequence(&opts, seed, "s", seed % 2 == 0).unwrap();
        prop_assert_eq!(a.scene, b.scene);
        prop_assert_eq!(a.sequence, b.sequence);
    }
}
