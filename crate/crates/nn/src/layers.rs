//! Parameterized building blocks on top of [`Graph`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Graph, Mat, NodeId, ParamId, ParamStore};

/// Gaussian matrix with standard deviation `std`.
pub fn normal_mat(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("finite std");
    Mat::from_fn(rows, cols, |_, _| dist.sample(rng))
}

/// Affine map `x·W + b` with `W: [d_in, d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Gaussian weights with std `1/sqrt(d_in)` and zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = normal_mat(rng, d_in, d_out, 1.0 / (d_in as f64).sqrt());
        Self::from_weight(store, name, w, bias, trainable)
    }

    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, trainable: bool) -> Self {
        Self::from_weight(store, name, Mat::zeros(d_in, d_out), bias, trainable)
    }

    fn from_weight(store: &mut ParamStore, name: &str, w: Mat, bias: bool, trainable: bool) -> Self {
        let (d_in, d_out) = w.shape();
        let weight = store.add(format!("{name}.weight"), w, trainable);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Mat::zeros(1, d_out), trainable));
        Self { weight, bias, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, trainable: bool) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Mat::filled(1, dim, 1.0), trainable),
            bias: store.add(format!("{name}.bias"), Mat::zeros(1, dim), trainable),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Stack of affine layers with GELU between consecutive layers (none after
/// the last one).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], trainable: bool, rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, trainable, rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i + 1 < self.layers.len() {
                h = g.gelu(h);
            }
        }
        h
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}

/// Scaled dot-product attention over already-projected `q: [nq, d]`,
/// `k: [nk, d]`, `v: [nk, d]`, split into `heads` column blocks.
pub fn attend(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId, heads: usize, causal: bool) -> NodeId {
    let d = g.value(q).cols();
    assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * hd, hd), g.slice_cols(k, h * hd, hd), g.slice_cols(v, h * hd, hd))
        };
        let scores = g.matmul_t(qh, kh);
        let scores = g.scale(scores, scale);
        let p = g.softmax_rows(scores, causal);
        outs.push(g.matmul(p, vh));
    }
    if heads == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)
    }
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, trainable: bool, rng: &mut impl Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, trainable, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, trainable, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, trainable, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, trainable, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, xq: NodeId, xk: NodeId, xv: NodeId, causal: bool) -> NodeId {
        let q = self.q.forward(g, xq);
        let k = self.k.forward(g, xk);
        let v = self.v.forward(g, xv);
        let a = attend(g, q, k, v, self.heads, causal);
        self.o.forward(g, a)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.o].iter().flat_map(|l| l.params()).collect()
    }
}
