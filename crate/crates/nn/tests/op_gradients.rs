//! Every tape operation checked against central finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reasontrack_nn::gradcheck::{frobenius_relative_error, jacobian};
use reasontrack_nn::layers::normal_mat;
use reasontrack_nn::{Graph, Mat, NodeId, ParamStore};

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-7;

/// Checks d(sum(w ⊙ f(inputs)))/d(inputs) for a fixed random weighting `w`.
fn check(name: &str, inputs: Vec<Mat>, f: impl Fn(&mut Graph, &[NodeId]) -> NodeId) {
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = {
        let mut g = Graph::inference(&store);
        let ids: Vec<NodeId> = inputs.iter().map(|m| g.constant(m.clone())).collect();
        let out = f(&mut g, &ids);
        let (r, c) = g.value(out).shape();
        normal_mat(&mut rng, r, c, 1.0)
    };
    let eval = |vals: &[Mat]| -> (f64, Vec<Mat>) {
        let mut g = Graph::new(&store);
        let ids: Vec<NodeId> = vals.iter().map(|m| g.variable(m.clone())).collect();
        let out = f(&mut g, &ids);
        let w = g.constant(probe.clone());
        let prod = g.mul(out, w);
        let loss = g.sum(prod);
        let grads = g.backward(loss);
        let gs = ids
            .iter()
            .zip(vals)
            .map(|(&id, v)| grads.node(id).cloned().unwrap_or_else(|| Mat::zeros(v.rows(), v.cols())))
            .collect();
        (g.scalar(loss), gs)
    };
    let (_, analytic) = eval(&inputs);
    for (k, input) in inputs.iter().enumerate() {
        let numeric = jacobian(
            |x| {
                let mut vals = inputs.clone();
                vals[k] = Mat::from_vec(input.rows(), input.cols(), x.to_vec());
                vec![eval(&vals).0]
            },
            input.data(),
            STEP,
        );
        let a = Mat::from_vec(1, input.len(), analytic[k].data().to_vec());
        let err = frobenius_relative_error(&a, &numeric, 1e-12);
        assert!(err < TOL, "{name}: input {k} rel err {err:e}");
    }
}

fn rand(seed: u64, r: usize, c: usize) -> Mat {
    normal_mat(&mut ChaCha8Rng::seed_from_u64(seed), r, c, 1.0)
}

#[test]
fn matmul_family() {
    check("matmul", vec![rand(1, 3, 4), rand(2, 4, 5)], |g, x| g.matmul(x[0], x[1]));
    check("matmul_t", vec![rand(3, 3, 4), rand(4, 5, 4)], |g, x| g.matmul_t(x[0], x[1]));
    // Same operand on both sides accumulates two contributions.
    check("matmul_self", vec![rand(5, 4, 4)], |g, x| g.matmul(x[0], x[0]));
}

#[test]
fn elementwise() {
    let (a, b) = (rand(6, 3, 3), rand(7, 3, 3).map(|v| v.abs() + 0.5));
    check("add", vec![a.clone(), b.clone()], |g, x| g.add(x[0], x[1]));
    check("sub", vec![a.clone(), b.clone()], |g, x| g.sub(x[0], x[1]));
    check("mul", vec![a.clone(), b.clone()], |g, x| g.mul(x[0], x[1]));
    check("div", vec![a.clone(), b.clone()], |g, x| g.div(x[0], x[1]));
    check("scale", vec![a.clone()], |g, x| g.scale(x[0], -2.5));
    check("add_scalar", vec![a.clone()], |g, x| g.add_scalar(x[0], 0.75));
    check("gelu", vec![a.clone()], |g, x| g.gelu(x[0]));
    check("sigmoid", vec![a.clone()], |g, x| g.sigmoid(x[0]));
    check("add_row", vec![a, rand(8, 1, 3)], |g, x| g.add_row(x[0], x[1]));
}

#[test]
fn normalization_and_softmax() {
    check("softmax", vec![rand(9, 4, 5)], |g, x| g.softmax_rows(x[0], false));
    check("softmax_causal", vec![rand(10, 5, 5)], |g, x| g.softmax_rows(x[0], true));
    check("layer_norm", vec![rand(11, 3, 6), rand(12, 1, 6), rand(13, 1, 6)], |g, x| {
        g.layer_norm(x[0], x[1], x[2])
    });
}

#[test]
fn structural() {
    check("gather_rows", vec![rand(14, 4, 3)], |g, x| g.gather_rows(x[0], vec![3, 0, 3, 1]));
    check("reshape", vec![rand(15, 2, 6)], |g, x| {
        let r = g.reshape(x[0], 4, 3);
        g.gelu(r)
    });
    check("concat_rows", vec![rand(16, 2, 3), rand(17, 1, 3)], |g, x| g.concat_rows(&[x[0], x[1], x[0]]));
    check("concat_cols", vec![rand(18, 2, 3), rand(19, 2, 1)], |g, x| g.concat_cols(&[x[1], x[0]]));
    check("slice_cols", vec![rand(20, 3, 5)], |g, x| g.slice_cols(x[0], 1, 3));
    check("sum", vec![rand(21, 3, 2)], |g, x| g.sum(x[0]));
    check("mean", vec![rand(22, 3, 2)], |g, x| g.mean(x[0]));
}

#[test]
fn losses() {
    check("cross_entropy", vec![rand(23, 4, 6)], |g, x| g.cross_entropy(x[0], vec![0, 5, 2, 2]));
    let targets = Mat::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    check("bce", vec![rand(24, 2, 3).map(|v| v * 4.0)], move |g, x| g.bce_with_logits(x[0], targets.clone()));
}

#[test]
fn cross_entropy_of_uniform_logits_is_log_vocab() {
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let l = g.constant(Mat::zeros(3, 37));
    let ce = g.cross_entropy(l, vec![0, 1, 36]);
    assert!((g.scalar(ce) - 37f64.ln()).abs() < 1e-12);
}

#[test]
fn frozen_params_get_no_gradient() {
    let mut store = ParamStore::new();
    let frozen = store.add("frozen", rand(30, 2, 2), false);
    let train = store.add("train", rand(31, 2, 2), true);
    let mut g = Graph::new(&store);
    let (f, t) = (g.param(frozen), g.param(train));
    let p = g.matmul(f, t);
    let loss = g.sum(p);
    assert!(!g.requires_grad(f));
    let grads = g.backward(loss);
    assert!(grads.param(frozen).is_none());
    assert!(grads.param(train).is_some());
}
