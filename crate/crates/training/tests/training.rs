use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reasontrack_core::{AnnotatedSequence, BinaryMask, InstructionKind, RunConfig};
use reasontrack_model::{TrackModel, Vocabulary};
use reasontrack_nn::gradcheck::{frobenius_relative_error, jacobian};
use reasontrack_nn::{Graph, Mat, ParamStore};
use reasontrack_synthgen::{generate_benchmark, lexicon, GenOptions};
use reasontrack_training::*;

fn small_data(n: usize) -> Vec<AnnotatedSequence> {
    let opts = GenOptions { height: 32, width: 32, frames: 6, max_size: 6, ..GenOptions::default() };
    generate_benchmark(n, 1, 3, &opts).unwrap().train.into_iter().map(|g| g.sequence).collect()
}

fn small_model(seed: u64) -> TrackModel {
    let config = RunConfig {
        brain_dim: 32,
        brain_layers: 1,
        brain_heads: 2,
        decoder_dim: 16,
        decoder_blocks: 1,
        decoder_heads: 2,
        encoder_blocks: 1,
        encoder_heads: 2,
        image_tokens: 4,
        lora_rank: 2,
        log_every: 1000,
        seed,
        ..RunConfig::default()
    };
    TrackModel::new(config, Vocabulary::new(lexicon())).unwrap()
}

#[test]
fn text_and_mask_loss_gradients_match_central_differences() {
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..4 * 7).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let targets = vec![3, 0, 6, 2];
    let text = |v: &[f64]| {
        let mut g = Graph::new(&store);
        let l = g.constant(Mat::from_vec(4, 7, v.to_vec()));
        let t = text_loss(&mut g, l, targets.clone());
        vec![g.scalar(t)]
    };
    let mut g = Graph::new(&store);
    let l = g.variable(Mat::from_vec(4, 7, x.clone()));
    let t = text_loss(&mut g, l, targets.clone());
    let analytic = g.backward(t).node(l).unwrap().clone().reshaped(1, 28);
    assert!(frobenius_relative_error(&analytic, &jacobian(text, &x, 1e-5), 1e-12) < 1e-4);

    let gt = BinaryMask::from_fn(5, 5, 0, |y, x| y + x < 5);
    let m: Vec<f64> = (0..25).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mask = |v: &[f64]| {
        let mut g = Graph::new(&store);
        let l = g.constant(Mat::from_vec(25, 1, v.to_vec()));
        let t = mask_loss(&mut g, l, &gt, MaskLossWeights::default()).unwrap();
        vec![g.scalar(t)]
    };
    let mut g = Graph::new(&store);
    let l = g.variable(Mat::from_vec(25, 1, m.clone()));
    let t = mask_loss(&mut g, l, &gt, MaskLossWeights::default()).unwrap();
    let analytic = g.backward(t).node(l).unwrap().clone().reshaped(1, 25);
    assert!(frobenius_relative_error(&analytic, &jacobian(mask, &m, 1e-5), 1e-12) < 1e-4);
}

#[test]
fn toy_model_gradient_audit() {
    let report = gradient_audit(2, 1e-5, 1e-6).unwrap();
    let worst = report.worst().unwrap();
    assert!(report.max_rel_err() < 1e-3, "worst group {} at {}: {:?}", worst.name, worst.max_rel_err, worst);
    for prefix in ["brain.lora", "brain.projector", "brain.phi", "decoder.adapter", "decoder.init_query", "decoder.block0"] {
        assert!(report.groups.iter().any(|g| g.name.starts_with(prefix)), "{prefix} not audited");
    }
}

fn joint_value(model: &TrackModel, data: &[AnnotatedSequence], ex: &TrainExample, w: &LossWeights) -> (f64, [f64; 3]) {
    let cache = FeatureCache::build(model, data).unwrap();
    let (inputs, _) = example_inputs(model, data, &cache, ex);
    let mut g = Graph::new(&model.store);
    let n = joint_loss(&mut g, model, &inputs, w).unwrap();
    (g.scalar(n.total), [g.scalar(n.text), g.scalar(n.mask), g.scalar(n.purport)])
}

#[test]
fn joint_loss_weights() {
    let data = small_data(2);
    let model = small_model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ex = sample_example(&data, Stage::Video, &mut rng).unwrap();
    let zero = LossWeights { text: 0.0, mask: 0.0, purport: 0.0, mask_terms: MaskLossWeights::default() };
    assert_eq!(joint_value(&model, &data, &ex, &zero).0, 0.0);
    let (total, parts) = joint_value(&model, &data, &ex, &LossWeights::from_config(&model.config));
    assert!(parts.iter().all(|&p| p >= 0.0));
    assert!((total - parts.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn sampling_respects_stage_rules() {
    let data = small_data(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut kinds = std::collections::BTreeSet::new();
    for _ in 0..200 {
        let ex = sample_example(&data, Stage::Image, &mut rng).unwrap();
        assert_eq!(ex.frames.len(), 1);
        assert_eq!(data[ex.sequence].instructions()[ex.record].kind(), InstructionKind::Explicit);
        let ex = sample_example(&data, Stage::Video, &mut rng).unwrap();
        assert_eq!(ex.frames.len(), 3);
        assert!(ex.frames.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(data[ex.sequence].instructions()[ex.record].kind(), InstructionKind::Explicit);
        let ex = sample_example(&data, Stage::Instruction, &mut rng).unwrap();
        kinds.insert(format!("{:?}", data[ex.sequence].instructions()[ex.record].kind()));
        assert!(data[ex.sequence].instructions()[ex.record].instructions().any(|t| t == ex.instruction));
    }
    assert_eq!(kinds.len(), 2);
    assert!(sample_example(&[], Stage::Video, &mut rng).is_none());
}

#[test]
fn single_frame_examples_leave_the_propagation_adapter_untouched() {
    let data = small_data(2);
    let model = small_model(2);
    let cache = FeatureCache::build(&model, &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = LossWeights::from_config(&model.config);
    let grads_for = |stage: Stage, rng: &mut ChaCha8Rng| {
        let ex = sample_example(&data, stage, rng).unwrap();
        let (inputs, _) = example_inputs(&model, &data, &cache, &ex);
        let mut g = Graph::new(&model.store);
        let n = joint_loss(&mut g, &model, &inputs, &w).unwrap();
        g.backward(n.total).into_param_grads()
    };
    let adapter = model.decoder.adapter_params();
    let norm = |grads: &[(reasontrack_nn::ParamId, Mat)]| {
        grads.iter().filter(|(id, _)| adapter.contains(id)).map(|(_, m)| m.max_abs()).fold(0.0, f64::max)
    };
    let single = grads_for(Stage::Image, &mut rng);
    assert_eq!(norm(&single), 0.0);
    let init = single.iter().find(|(id, _)| *id == model.decoder.init_query).unwrap();
    assert!(init.1.max_abs() > 0.0);
    assert!(norm(&grads_for(Stage::Video, &mut rng)) > 0.0);
}

#[test]
fn stages_are_deterministic_and_respect_the_freeze() {
    let data = small_data(3);
    let plan = StagePlan { stage: Stage::Video, steps: 4, batch_size: 2 };
    let mut a = small_model(3);
    let enc = a.encoder_checksum();
    let base = a.brain_base_checksum();
    let ra = train_stage(&mut a, &data, &plan).unwrap();
    let mut b = small_model(3);
    let rb = train_stage(&mut b, &data, &plan).unwrap();
    assert_eq!(ra.curve, rb.curve);
    assert_eq!(loss_csv(&ra.curve), loss_csv(&rb.curve));
    assert_eq!(ra.encoder_checksum, enc);
    assert_eq!(ra.brain_base_checksum, base);
    assert_eq!(a.encoder_checksum(), enc);
    let all: Vec<_> = a.store.ids().collect();
    assert_eq!(a.store.checksum(&all), b.store.checksum(&all));
    assert_ne!(a.store.checksum(a.store.trainable_ids()), small_model(3).store.checksum(small_model(3).store.trainable_ids()));
    let csv = loss_csv(&ra.curve);
    assert!(csv.starts_with("step,total,text,mask,purport\n1,"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn non_finite_weights_abort_with_the_step() {
    let data = small_data(2);
    let mut model = small_model(4);
    let id = model.brain.phi_params()[0];
    model.store.get_mut(id).data_mut()[0] = f64::NAN;
    let plan = StagePlan { stage: Stage::Video, steps: 3, batch_size: 1 };
    assert!(matches!(train_stage(&mut model, &data, &plan), Err(TrainError::Diverged { step: 1 })));
}

#[test]
fn stage_numbers() {
    assert_eq!(Stage::from_number(3), Some(Stage::Instruction));
    assert_eq!(Stage::from_number(0), None);
    assert_eq!(Stage::Video.number(), 2);
}
