//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every builder method evaluates its result eagerly and appends a node;
//! [`Graph::backward`] then walks the nodes in reverse creation order. The
//! op set is small but covers what the actor/critic networks and the PPO
//! losses need, including the segment operations used for sparse graph
//! attention (softmax over the in-edges of each node, scatter-add of
//! messages).
//!
//! Shape misuse inside a graph is a programming error and panics. Layers
//! that accept caller data validate first and return [`crate::Error`].

use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_into, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Variable,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Affine(NodeId, T),
    Elu(NodeId),
    LeakyRelu(NodeId, T),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Clamp(NodeId, T, T),
    Minimum(NodeId, NodeId),
    Maximum(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    GatherRows(NodeId, Arc<[usize]>),
    ScatterAddRows(NodeId, Arc<[usize]>),
    SegmentSoftmax(NodeId, Arc<[usize]>, usize),
    RowSum(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    LogSoftmaxRows(NodeId),
    PickCols(NodeId, Arc<[usize]>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Variable => "variable",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::Affine(..) => "affine",
            Op::Elu(_) => "elu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Clamp(..) => "clamp",
            Op::Minimum(..) => "minimum",
            Op::Maximum(..) => "maximum",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::RowSum(_) => "row_sum",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::LogSoftmaxRows(_) => "log_softmax",
            Op::PickCols(..) => "pick_cols",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf node (input variable or parameter node).
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.nodes[node.0].as_ref()
    }

    /// Gradient for one parameter; `None` when the loss does not reach it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.index()].as_ref()
    }

    /// Per-parameter gradients aligned with the store.
    pub fn params(&self) -> &[Option<Tensor<T>>] {
        &self.params
    }
}

/// Computation graph borrowing a parameter store read-only.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node<T>>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.value(*p),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.value(id).shape()
    }

    /// Errors if any recorded value contains NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            None => Ok(()),
            Some((idx, op)) => Err(Error::NonFinite(format!("graph node {idx} ({op})"))),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> NodeId {
        if self.first_non_finite.is_none() && !value.all_finite() {
            self.first_non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node { op, value: Some(value), requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ----- leaves -----

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        self.nodes.push(Node { op: Op::Param(id), value: None, requires_grad: true });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(n);
        n
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Input, t, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Variable, t, true)
    }

    // ----- algebra -----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols(), vb.rows(), "matmul {:?} x {:?}", va.shape(), vb.shape());
        let out = va.matmul(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), out, rg)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "add");
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), out, rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "sub");
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Sub(a, b), out, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "mul");
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), out, rg)
    }

    /// `a (n x m) + row (1 x m)` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (self.value(a), self.value(row));
        assert!(vr.rows() == 1 && vr.cols() == va.cols(), "add_row {:?} + {:?}", va.shape(), vr.shape());
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(Op::AddRow(a, row), out, rg)
    }

    /// Scales row `r` of `a` by `col[r]`.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (va, vc) = (self.value(a), self.value(col));
        assert!(vc.cols() == 1 && vc.rows() == va.rows(), "mul_col {:?} * {:?}", va.shape(), vc.shape());
        let mut out = va.clone();
        for r in 0..out.rows() {
            let s = vc.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|o| *o *= s);
        }
        let rg = self.rg(a) || self.rg(col);
        self.push(Op::MulCol(a, col), out, rg)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: NodeId, scale: T, shift: T) -> NodeId {
        let out = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(Op::Affine(a, scale), out, rg)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        self.affine(a, s, T::zero())
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.affine(a, -T::one(), T::zero())
    }

    // ----- pointwise nonlinearities -----

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { x.exp_m1() });
        let rg = self.rg(a);
        self.push(Op::Elu(a), out, rg)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: T) -> NodeId {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { slope * x });
        let rg = self.rg(a);
        self.push(Op::LeakyRelu(a, slope), out, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(a);
        self.push(Op::Relu(a), out, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(Op::Sigmoid(a), out, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(Op::Tanh(a), out, rg)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.exp());
        let rg = self.rg(a);
        self.push(Op::Exp(a), out, rg)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.ln());
        let rg = self.rg(a);
        self.push(Op::Log(a), out, rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(Op::Square(a), out, rg)
    }

    /// Clips into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> NodeId {
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        let rg = self.rg(a);
        self.push(Op::Clamp(a, lo, hi), out, rg)
    }

    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "minimum");
        let out = self.value(a).zip_map(self.value(b), |x, y| if x <= y { x } else { y });
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Minimum(a, b), out, rg)
    }

    pub fn maximum(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "maximum");
        let out = self.value(a).zip_map(self.value(b), |x, y| if x >= y { x } else { y });
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Maximum(a, b), out, rg)
    }

    // ----- structure -----

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0])[0];
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatCols(parts.to_vec()), out, rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.shape(parts[0])[1];
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::new(rows, cols, data).expect("concat_rows layout");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatRows(parts.to_vec()), out, rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        assert!(start + len <= v.cols(), "slice_cols out of range");
        let out = Tensor::from_fn(v.rows(), len, |r, c| v.get(r, start + c));
        let rg = self.rg(a);
        self.push(Op::SliceCols(a, start), out, rg)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        assert!(start + len <= v.rows(), "slice_rows out of range");
        let out = Tensor::new(len, v.cols(), v.data()[start * v.cols()..(start + len) * v.cols()].to_vec())
            .expect("slice_rows layout");
        let rg = self.rg(a);
        self.push(Op::SliceRows(a, start), out, rg)
    }

    /// Output row `r` is row `index[r]` of `a`.
    pub fn gather_rows(&mut self, a: NodeId, index: Arc<[usize]>) -> NodeId {
        let v = self.value(a);
        let mut out = Tensor::zeros(index.len(), v.cols());
        for (r, &src) in index.iter().enumerate() {
            assert!(src < v.rows(), "gather_rows index {src} >= {}", v.rows());
            out.row_mut(r).copy_from_slice(v.row(src));
        }
        let rg = self.rg(a);
        self.push(Op::GatherRows(a, index), out, rg)
    }

    /// Adds row `r` of `a` into output row `index[r]` of an `n_out`-row result.
    pub fn scatter_add_rows(&mut self, a: NodeId, index: Arc<[usize]>, n_out: usize) -> NodeId {
        let v = self.value(a);
        assert_eq!(index.len(), v.rows(), "scatter index length");
        let mut out = Tensor::zeros(n_out, v.cols());
        for (r, &dst) in index.iter().enumerate() {
            assert!(dst < n_out, "scatter index {dst} >= {n_out}");
            for (o, &x) in out.row_mut(dst).iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        let rg = self.rg(a);
        self.push(Op::ScatterAddRows(a, index), out, rg)
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    ///
    /// Uses max subtraction per segment, so large logits stay finite.
    pub fn segment_softmax(&mut self, a: NodeId, segment: Arc<[usize]>, n_segments: usize) -> NodeId {
        let v = self.value(a);
        assert_eq!(segment.len(), v.rows(), "segment index length");
        let cols = v.cols();
        let mut max = Tensor::full(n_segments, cols, T::neg_infinity());
        for (r, &s) in segment.iter().enumerate() {
            assert!(s < n_segments, "segment id {s} >= {n_segments}");
            for c in 0..cols {
                if v.get(r, c) > max.get(s, c) {
                    max.set(s, c, v.get(r, c));
                }
            }
        }
        let mut out = Tensor::zeros(v.rows(), cols);
        let mut denom = Tensor::zeros(n_segments, cols);
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                let e = (v.get(r, c) - max.get(s, c)).exp();
                out.set(r, c, e);
                denom.set(s, c, denom.get(s, c) + e);
            }
        }
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                out.set(r, c, out.get(r, c) / denom.get(s, c));
            }
        }
        let rg = self.rg(a);
        self.push(Op::SegmentSoftmax(a, segment, n_segments), out, rg)
    }

    /// Per-row sum, `n x m -> n x 1`.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = Tensor::column((0..v.rows()).map(|r| v.row(r).iter().fold(T::zero(), |s, &x| s + x)).collect());
        let rg = self.rg(a);
        self.push(Op::RowSum(a), out, rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), out, rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        assert!(!v.is_empty(), "mean of empty tensor");
        let out = Tensor::scalar(v.sum() / T::lit(v.len() as f64));
        let rg = self.rg(a);
        self.push(Op::Mean(a), out, rg)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let mut out = v.clone();
        for r in 0..out.rows() {
            log_softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(a);
        self.push(Op::LogSoftmaxRows(a), out, rg)
    }

    /// Picks `a[r, index[r]]` for every row, giving `n x 1`.
    pub fn pick_cols(&mut self, a: NodeId, index: Arc<[usize]>) -> NodeId {
        let v = self.value(a);
        assert_eq!(index.len(), v.rows(), "pick_cols index length");
        let out = Tensor::column(
            index
                .iter()
                .enumerate()
                .map(|(r, &c)| {
                    assert!(c < v.cols(), "pick_cols column {c} >= {}", v.cols());
                    v.get(r, c)
                })
                .collect(),
        );
        let rg = self.rg(a);
        self.push(Op::PickCols(a, index), out, rg)
    }

    // ----- backward -----

    /// Reverse pass from a `1 x 1` loss node.
    pub fn backward(&self, loss: NodeId) -> Gradients<T> {
        assert_eq!(self.shape(loss), [1, 1], "backward needs a scalar loss");
        self.backward_with_seed(loss, Tensor::scalar(T::one()))
    }

    /// Reverse pass seeded with `d loss / d output = seed`.
    pub fn backward_with_seed(&self, output: NodeId, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(output), "seed shape");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let mut params: Vec<Option<Tensor<T>>> = vec![None; self.params.len()];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Variable => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Param(p) => {
                    accumulate(&mut params[p.index()], &g);
                    grads[i] = Some(g);
                    continue;
                }
                _ => self.propagate(i, &g, &mut grads),
            }
        }
        Gradients { nodes: grads, params }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], id: NodeId) -> Option<&'g mut Tensor<T>> {
        if !self.rg(id) {
            return None;
        }
        let shape = self.shape(id);
        Some(grads[id.0].get_or_insert_with(|| Tensor::zeros(shape[0], shape[1])))
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.as_ref().expect("non-param node has a value");
        match &node.op {
            Op::Input | Op::Variable | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_into(ga, g, false, self.value(*b), true, true);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_into(gb, self.value(*a), true, g, false, true);
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if let Some(s) = self.slot(grads, id) {
                        s.add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.add_assign(g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    zip_acc(s, g, |gv| -gv);
                }
            }
            Op::Mul(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    zip3_acc(s, g, self.value(*b), |gv, o| gv * o);
                }
                if let Some(s) = self.slot(grads, *b) {
                    zip3_acc(s, g, self.value(*a), |gv, o| gv * o);
                }
            }
            Op::AddRow(a, row) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.add_assign(g);
                }
                if let Some(s) = self.slot(grads, *row) {
                    for r in 0..g.rows() {
                        for (o, &x) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::MulCol(a, col) => {
                let (va, vc) = (self.value(*a), self.value(*col));
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..g.rows() {
                        let c = vc.get(r, 0);
                        for (o, &x) in s.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += x * c;
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *col) {
                    for r in 0..g.rows() {
                        let dot = g.row(r).iter().zip(va.row(r)).fold(T::zero(), |acc, (&x, &w)| acc + x * w);
                        s.set(r, 0, s.get(r, 0) + dot);
                    }
                }
            }
            Op::Affine(a, scale) => {
                let scale = *scale;
                if let Some(s) = self.slot(grads, *a) {
                    zip_acc(s, g, |gv| gv * scale);
                }
            }
            Op::Elu(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    let x = self.value(*a);
                    for k in 0..g.len() {
                        let d = if x.data()[k] > T::zero() { T::one() } else { y.data()[k] + T::one() };
                        s.data_mut()[k] += g.data()[k] * d;
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                if let Some(s) = self.slot(grads, *a) {
                    zip3_acc(s, g, self.value(*a), |gv, x| if x > T::zero() { gv } else { gv * slope });
                }
            }
            Op::Relu(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    zip3_acc(s, g, self.value(*a), |gv, x| if x > T::zero() { gv } else { T::zero() });
                }
            }
            Op::Sigmoid(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    zip3_acc(s, g, y, |gv, yv| gv * yv * (T::one() - yv));
                }
            }
            Op::Tanh(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    zip3_acc(s, g, y, |gv, yv| gv * (T::one() - yv * yv));
                }
            }
            Op::Exp(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    zip3_acc(s, g, y, |gv, yv| gv * yv);
                }
            }
            Op::Log(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    zip3_acc(s, g, self.value(*a), |gv, x| gv / x);
                }
            }
            Op::Square(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    zip3_acc(s, g, self.value(*a), |gv, x| gv * (x + x));
                }
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                if let Some(s) = self.slot(grads, *a) {
                    zip3_acc(s, g, self.value(*a), |gv, x| if x >= lo && x <= hi { gv } else { T::zero() });
                }
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let take_min = matches!(node.op, Op::Minimum(..));
                let (va, vb) = (self.value(*a), self.value(*b));
                let pick_a: Vec<bool> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .map(|(&x, &z)| if take_min { x <= z } else { x >= z })
                    .collect();
                if let Some(s) = self.slot(grads, *a) {
                    for (k, o) in s.data_mut().iter_mut().enumerate() {
                        if pick_a[k] {
                            *o += g.data()[k];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (k, o) in s.data_mut().iter_mut().enumerate() {
                        if !pick_a[k] {
                            *o += g.data()[k];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if let Some(s) = self.slot(grads, p) {
                        for r in 0..g.rows() {
                            for (o, &x) in s.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += x;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.shape(p)[0] * g.cols();
                    if let Some(s) = self.slot(grads, p) {
                        for (o, &x) in s.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                            *o += x;
                        }
                    }
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let start = *start;
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..g.rows() {
                        for (o, &x) in s.row_mut(r)[start..start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let start = *start;
                if let Some(s) = self.slot(grads, *a) {
                    let cols = g.cols();
                    for (o, &x) in s.data_mut()[start * cols..start * cols + g.len()].iter_mut().zip(g.data()) {
                        *o += x;
                    }
                }
            }
            Op::GatherRows(a, index) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (r, &src) in index.iter().enumerate() {
                        for (o, &x) in s.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::ScatterAddRows(a, index) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (r, &dst) in index.iter().enumerate() {
                        for (o, &x) in s.row_mut(r).iter_mut().zip(g.row(dst)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::SegmentSoftmax(a, segment, n_segments) => {
                if let Some(s) = self.slot(grads, *a) {
                    let cols = g.cols();
                    let mut dot = Tensor::zeros(*n_segments, cols);
                    for (r, &seg) in segment.iter().enumerate() {
                        for c in 0..cols {
                            dot.set(seg, c, dot.get(seg, c) + g.get(r, c) * y.get(r, c));
                        }
                    }
                    for (r, &seg) in segment.iter().enumerate() {
                        for c in 0..cols {
                            let d = y.get(r, c) * (g.get(r, c) - dot.get(seg, c));
                            s.set(r, c, s.get(r, c) + d);
                        }
                    }
                }
            }
            Op::RowSum(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..s.rows() {
                        let gv = g.get(r, 0);
                        s.row_mut(r).iter_mut().for_each(|o| *o += gv);
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                let n = self.value(*a).len();
                let gv = if matches!(node.op, Op::Mean(_)) { g.item() / T::lit(n as f64) } else { g.item() };
                if let Some(s) = self.slot(grads, *a) {
                    s.data_mut().iter_mut().for_each(|o| *o += gv);
                }
            }
            Op::LogSoftmaxRows(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..g.rows() {
                        let gsum = g.row(r).iter().fold(T::zero(), |acc, &x| acc + x);
                        let yr = y.row(r);
                        let gr = g.row(r);
                        for (c, o) in s.row_mut(r).iter_mut().enumerate() {
                            *o += gr[c] - yr[c].exp() * gsum;
                        }
                    }
                }
            }
            Op::PickCols(a, index) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (r, &c) in index.iter().enumerate() {
                        s.set(r, c, s.get(r, c) + g.get(r, 0));
                    }
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: &Tensor<T>) {
    match slot {
        Some(s) => s.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

fn zip_acc<T: Scalar>(s: &mut Tensor<T>, g: &Tensor<T>, f: impl Fn(T) -> T) {
    for (o, &x) in s.data_mut().iter_mut().zip(g.data()) {
        *o += f(x);
    }
}

fn zip3_acc<T: Scalar>(s: &mut Tensor<T>, g: &Tensor<T>, other: &Tensor<T>, f: impl Fn(T, T) -> T) {
    for ((o, &x), &w) in s.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
        *o += f(x, w);
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// In-place log-softmax with max subtraction.
pub fn log_softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let lse = row.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp()).ln() + max;
    row.iter_mut().for_each(|x| *x -= lse);
}

/// Softmax of a slice with max subtraction.
pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let mut out = row.to_vec();
    log_softmax_in_place(&mut out);
    out.iter_mut().for_each(|x| *x = x.exp());
    out
}
