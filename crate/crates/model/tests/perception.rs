mod common;

use common::{noise_frame, noise_video, small_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasontrack_core::Frame;
use reasontrack_model::{fuse_purport, MaskPrediction, ModelError, QueryState, TrackModel};
use reasontrack_nn::gradcheck::{frobenius_relative_error, jacobian};
use reasontrack_nn::{Graph, Mat};

fn random_state(model: &TrackModel, seed: u64) -> QueryState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.config.decoder_dim;
    let mut v = || (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    QueryState { q_referring: v(), q_purport: v(), q_online: v(), tau: 0.0, rethink_log: vec![] }
}

#[test]
fn encoder_grid_shape_and_determinism() {
    let model = TrackModel::new(reasontrack_core::RunConfig::default(), reasontrack_model::Vocabulary::new(["red"]))
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frame = noise_frame(&mut rng, 64, 64, 0);
    let f = model.encode(&frame).unwrap();
    assert_eq!((f.rows, f.cols, f.dim()), (8, 8, model.config.decoder_dim));
    assert_eq!(f.grid.rows(), 64);
    assert_eq!(model.encode(&frame.clone()).unwrap(), f);

    let odd = noise_frame(&mut rng, 65, 64, 0);
    assert!(matches!(model.encode(&odd), Err(ModelError::Shape { .. })));
}

#[test]
fn patch_embedding_is_local() {
    let model = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frame = noise_frame(&mut rng, 32, 32, 0);
    let mut pixels = frame.pixels().to_vec();
    let before = model.encoder.embed_patches(&model.store, &pixels, 32, 32).unwrap();
    // Pixel (y=9, x=18) lies in patch row 1, column 2 of a 4x4 grid.
    for c in 0..3 {
        pixels[(9 * 32 + 18) * 3 + c] += 0.5;
    }
    let after = model.encoder.embed_patches(&model.store, &pixels, 32, 32).unwrap();
    for r in 0..16 {
        let same = before.row(r) == after.row(r);
        assert_eq!(same, r != 6, "patch {r}");
    }
}

#[test]
fn decode_shapes_range_and_determinism() {
    let model = small_model();
    let f = model.encode(&noise_video(3, 1)[0]).unwrap();
    let state = random_state(&model, 4);
    let p = model.decode(&f, &state).unwrap();
    assert_eq!(p.logits.len(), 32 * 32);
    assert_eq!(p.mask.shape(), (32, 32));
    assert!((0.0..=1.0).contains(&p.purport_score));
    assert_eq!(p.q_next_raw.len(), 16);
    assert_eq!(model.decode(&f, &state).unwrap(), p);
    for (l, &m) in p.logits.iter().zip(p.mask.grid()) {
        assert_eq!(m, *l > 0.0);
    }
}

#[test]
fn binarization_is_strict() {
    let p = MaskPrediction::from_logits(vec![0.0, 1e-300, -1e-300, 2.0], 2, 2, 0, 0.5, vec![]).unwrap();
    assert_eq!(p.mask.grid(), &[false, true, false, true]);
}

#[test]
fn decode_rejects_non_finite_and_misshaped_queries() {
    let model = small_model();
    let f = model.encode(&noise_video(3, 1)[0]).unwrap();
    let mut state = random_state(&model, 4);
    state.q_referring[3] = f64::NAN;
    assert!(matches!(model.decode(&f, &state), Err(ModelError::NonFinite { .. })));
    state.q_referring = vec![0.0; 5];
    assert!(matches!(model.decode(&f, &state), Err(ModelError::Shape { .. })));
}

#[test]
fn mask_logit_gradient_wrt_referring_query_matches_central_differences() {
    let model = small_model();
    let f = model.encode(&noise_video(5, 1)[0]).unwrap();
    let state = random_state(&model, 6);
    let total = |q_r: &[f64]| {
        let s = QueryState { q_referring: q_r.to_vec(), ..state.clone() };
        vec![model.decode(&f, &s).unwrap().logits.iter().sum::<f64>()]
    };
    let numeric = jacobian(total, &state.q_referring, 1e-5);

    let mut g = Graph::new(&model.store);
    let q_r = g.variable(Mat::row_vector(state.q_referring.clone()));
    let q_p = g.constant(Mat::row_vector(state.q_purport.clone()));
    let q_t = g.constant(Mat::row_vector(state.q_online.clone()));
    let out = model.decoder.decode(&mut g, &f, q_r, q_p, q_t).unwrap();
    let s = g.sum(out.logits);
    let grads = g.backward(s);
    let analytic = grads.node(q_r).unwrap().clone();
    let err = frobenius_relative_error(&analytic, &numeric, 1e-12);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn all_ones_purport_query_leaves_iou_token_unchanged() {
    let model = small_model();
    let iou = model.iou_token();
    let fused = fuse_purport(&vec![1.0; iou.len()], &iou).unwrap();
    assert!(fused.iter().zip(&iou).all(|(a, b)| a.to_bits() == b.to_bits()));

    // The same product as built inside the decoder graph.
    let mut g = Graph::inference(&model.store);
    let ones = g.constant(Mat::filled(1, iou.len(), 1.0));
    let tok = g.param(model.decoder.iou_token);
    let prod = g.mul(ones, tok);
    assert!(g.value(prod).bit_eq(model.store.get(model.decoder.iou_token)));
}

#[test]
fn propagation_zero_weights_and_jacobian() {
    let model = small_model();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pred = |q: &[f64]| MaskPrediction::from_logits(vec![0.0; 4], 2, 2, 0, 0.5, q.to_vec()).unwrap();
    let out = model.propagate_query(&pred(&x));
    assert_eq!(out.len(), 16);

    let numeric = jacobian(|q| model.propagate_query(&pred(q)), &x, 1e-6);
    let mut analytic = Mat::zeros(16, 16);
    for i in 0..16 {
        let mut g = Graph::new(&model.store);
        let h = g.variable(Mat::row_vector(x.clone()));
        let y = model.decoder.propagate(&mut g, h);
        let yi = g.slice_cols(y, i, 1);
        let s = g.sum(yi);
        analytic.row_mut(i).copy_from_slice(g.backward(s).node(h).unwrap().data());
    }
    assert!(frobenius_relative_error(&analytic, &numeric, 1e-12) < 1e-6);

    let mut zeroed = model.clone();
    for id in zeroed.decoder.adapter_params() {
        let (r, c) = zeroed.store.get(id).shape();
        *zeroed.store.get_mut(id) = Mat::zeros(r, c);
    }
    assert_eq!(zeroed.propagate_query(&pred(&x)), vec![0.0; 16]);
}

#[test]
fn initial_online_query_is_zero_stable_and_trainable() {
    let model = small_model();
    assert_eq!(model.init_online_query(), vec![0.0; 16]);
    assert_eq!(model.init_online_query(), model.init_online_query());

    let f = model.encode(&noise_video(8, 1)[0]).unwrap();
    let state = random_state(&model, 9);
    let mut g = Graph::new(&model.store);
    let q_r = g.constant(Mat::row_vector(state.q_referring));
    let q_p = g.constant(Mat::row_vector(state.q_purport));
    let q_t = g.param(model.decoder.init_query);
    let out = model.decoder.decode(&mut g, &f, q_r, q_p, q_t).unwrap();
    let s = g.sum(out.logits);
    let grads = g.backward(s);
    assert!(grads.param(model.decoder.init_query).unwrap().max_abs() > 0.0);
}

#[test]
fn frames_must_be_large_enough() {
    assert!(Frame::new(8, 8, vec![0.0; 8 * 8 * 3], 0).is_err());
}
