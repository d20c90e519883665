//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] is a Wengert list built eagerly while the forward pass runs.
//! Every node keeps its value; [`Graph::backward`] walks the list in reverse
//! and accumulates adjoints for every node that (transitively) depends on a
//! trainable parameter or on an input created with [`Graph::variable`].
//! Frozen parameters enter as constants, so no gradient work is spent on them.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::mat::gemm;
use crate::{Mat, ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Mat, rstd: Vec<f64> },
    GatherRows(NodeId, Vec<usize>),
    Reshape(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    Sum(NodeId),
    Mean(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Mat },
    BceWithLogits { logits: NodeId, targets: Mat },
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    params: HashMap<ParamId, NodeId>,
    track: bool,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Grads {
    nodes: Vec<Option<Mat>>,
    params: Vec<(ParamId, NodeId)>,
}

impl Grads {
    pub fn node(&self, id: NodeId) -> Option<&Mat> {
        self.nodes[id.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, n)| self.node(*n))
    }

    /// Gradients of every trainable parameter touched by the forward pass,
    /// ordered by parameter id.
    pub fn into_param_grads(mut self) -> Vec<(ParamId, Mat)> {
        let mut out: Vec<(ParamId, Mat)> = self
            .params
            .iter()
            .filter_map(|&(p, n)| self.nodes[n.0].take().map(|g| (p, g)))
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

impl<'a> Graph<'a> {
    /// A graph that records gradients for trainable parameters.
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, nodes: Vec::with_capacity(256), params: HashMap::new(), track: true }
    }

    /// A graph that never requires gradients (inference).
    pub fn inference(store: &'a ParamStore) -> Self {
        Self { track: false, ..Self::new(store) }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.shape(), (1, 1), "scalar() on {:?}", v.shape());
        v.data()[0]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Mat, op: Op, parents: &[NodeId]) -> NodeId {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Parameter leaf. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let rg = self.track && self.store.is_trainable(id);
        let n = self.push(Cow::Borrowed(self.store.get(id)), Op::Leaf, rg);
        self.params.insert(id, n);
        n
    }

    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Input leaf whose gradient is recorded (when the graph tracks).
    pub fn variable(&mut self, value: Mat) -> NodeId {
        let rg = self.track;
        self.push(Cow::Owned(value), Op::Leaf, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push_op(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        self.push_op(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push_op(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push_op(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push_op(v, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push_op(v, Op::Div(a, b), &[a, b])
    }

    /// Adds the `[1, d]` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows(), 1, "add_row expects a row vector");
        assert_eq!(av.cols(), bv.cols(), "add_row width mismatch");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        self.push_op(v, Op::AddRow(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        self.push_op(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x + s);
        self.push_op(v, Op::AddScalar(a), &[a])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(gelu);
        self.push_op(v, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push_op(v, Op::Sigmoid(a), &[a])
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is
    /// excluded (probability exactly zero).
    pub fn softmax_rows(&mut self, a: NodeId, causal: bool) -> NodeId {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let limit = if causal { (r + 1).min(x.cols()) } else { x.cols() };
            let row = &x.row(r)[..limit];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut v.row_mut(r)[..limit];
            let mut z = 0.0;
            for (o, &xi) in out.iter_mut().zip(row) {
                *o = (xi - m).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        self.push_op(v, Op::Softmax(a), &[a])
    }

    /// Per-row layer normalization with learned `[1, d]` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        assert_eq!(self.value(gain).shape(), (1, d));
        assert_eq!(self.value(bias).shape(), (1, d));
        let mut xhat = Mat::zeros(n, d);
        let mut rstd = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
            rstd.push(rs);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = xhat.clone();
        for r in 0..n {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gi + bi;
            }
        }
        self.push_op(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias])
    }

    /// `out[r] = a[idx[r]]`
    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let av = self.value(a);
        let mut v = Mat::zeros(idx.len(), av.cols());
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).copy_from_slice(av.row(i));
        }
        self.push_op(v, Op::GatherRows(a, idx), &[a])
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = self.value(a).clone().reshaped(rows, cols);
        self.push_op(v, Op::Reshape(a), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        self.push_op(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols height mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        self.push_op(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let v = Mat::from_fn(av.rows(), len, |r, c| av.get(r, start + c));
        self.push_op(v, Op::SliceCols(a, start), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Mat::scalar(self.value(a).sum());
        self.push_op(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let v = Mat::scalar(av.sum() / av.len() as f64);
        self.push_op(v, Op::Mean(a), &[a])
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "cross_entropy: one target per row");
        assert!(!targets.is_empty(), "cross_entropy over zero rows");
        let mut probs = Mat::zeros(lv.rows(), lv.cols());
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[t];
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let v = Mat::scalar(total / targets.len() as f64);
        self.push_op(v, Op::CrossEntropy { logits, targets, probs }, &[logits])
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`,
    /// computed in the numerically stable softplus form.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Mat) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.shape(), targets.shape(), "bce_with_logits shape mismatch");
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let v = Mat::scalar(total / lv.len() as f64);
        self.push_op(v, Op::BceWithLogits { logits, targets }, &[logits])
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Mat::scalar(1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, NodeId)> = self.params.iter().map(|(&p, &n)| (p, n)).collect();
        params.sort();
        Grads { nodes: grads, params }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    accumulate_gemm(grads, *a, g, self.value(*b), true);
                }
                if needs(*b) {
                    accumulate_gemm_lhs_t(grads, *b, self.value(*a), g);
                }
            }
            Op::MatMulT(a, b) => {
                // out = a·bᵀ ⇒ da = g·b, db = gᵀ·a
                if needs(*a) {
                    accumulate_gemm(grads, *a, g, self.value(*b), false);
                }
                if needs(*b) {
                    accumulate_gemm_lhs_t(grads, *b, g, self.value(*a));
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if needs(*b) {
                    accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if needs(*a) {
                    accumulate(grads, *a, g.zip_map(bv, |x, y| x / y));
                }
                if needs(*b) {
                    let out = self.value(NodeId(i));
                    let t = g.zip_map(out, |x, o| x * o);
                    accumulate(grads, *b, t.zip_map(bv, |x, y| -x / y));
                }
            }
            Op::AddRow(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.col_sums());
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Gelu(a) => accumulate(grads, *a, g.zip_map(self.value(*a), |gi, x| gi * gelu_grad(x))),
            Op::Sigmoid(a) => {
                let y = self.value(NodeId(i));
                accumulate(grads, *a, g.zip_map(y, |gi, s| gi * s * (1.0 - s)));
            }
            Op::Softmax(a) => {
                let y = self.value(NodeId(i));
                let mut dx = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yi), &gi) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = yi * (gi - dot);
                    }
                }
                accumulate(grads, *a, dx);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let gv = self.value(*gain);
                let (n, d) = xhat.shape();
                if needs(*x) {
                    let mut dx = Mat::zeros(n, d);
                    for r in 0..n {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        let gp: Vec<f64> = gr.iter().zip(gv.data()).map(|(a, b)| a * b).collect();
                        let m1 = gp.iter().sum::<f64>() / d as f64;
                        let m2 = gp.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for ((o, &gpi), &xhi) in dx.row_mut(r).iter_mut().zip(&gp).zip(xh) {
                            *o = rstd[r] * (gpi - m1 - xhi * m2);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if needs(*gain) {
                    accumulate(grads, *gain, g.zip_map(xhat, |a, b| a * b).col_sums());
                }
                if needs(*bias) {
                    accumulate(grads, *bias, g.col_sums());
                }
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let mut da = Mat::zeros(av.rows(), av.cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(grads, *a, g.clone().reshaped(r, c));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    if needs(p) {
                        let slice = g.data()[off * c..(off + r) * c].to_vec();
                        accumulate(grads, p, Mat::from_vec(r, c, slice));
                    }
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    if needs(p) {
                        accumulate(grads, p, Mat::from_fn(r, c, |i, j| g.get(i, off + j)));
                    }
                    off += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).shape();
                let mut da = Mat::zeros(r, c);
                for i in 0..r {
                    da.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(grads, *a, Mat::filled(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                accumulate(grads, *a, Mat::filled(r, c, g.data()[0] / (r * c) as f64));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let s = g.data()[0] / targets.len() as f64;
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let row = d.row_mut(r);
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= s;
                    }
                }
                accumulate(grads, *logits, d);
            }
            Op::BceWithLogits { logits, targets } => {
                let s = g.data()[0] / targets.len() as f64;
                let d = self.value(*logits).zip_map(targets, |x, t| (sigmoid(x) - t) * s);
                accumulate(grads, *logits, d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], id: NodeId, g: Mat) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// grads[id] += x·op(y)
fn accumulate_gemm(grads: &mut [Option<Mat>], id: NodeId, x: &Mat, y: &Mat, ty: bool) {
    let rows = x.rows();
    let cols = if ty { y.rows() } else { y.cols() };
    match &mut grads[id.0] {
        Some(existing) => gemm(x, false, y, ty, existing, 1.0),
        slot @ None => {
            let mut out = Mat::zeros(rows, cols);
            gemm(x, false, y, ty, &mut out, 0.0);
            *slot = Some(out);
        }
    }
}

/// grads[id] += xᵀ·y
fn accumulate_gemm_lhs_t(grads: &mut [Option<Mat>], id: NodeId, x: &Mat, y: &Mat) {
    match &mut grads[id.0] {
        Some(existing) => gemm(x, true, y, false, existing, 1.0),
        slot @ None => {
            let mut out = Mat::zeros(x.cols(), y.cols());
            gemm(x, true, y, false, &mut out, 0.0);
            *slot = Some(out);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
