//! Parameterised building blocks recorded onto a [`Graph`].
//!
//! Graph-structured layers work on edge lists, so a minibatch of many small
//! interaction graphs is just one larger disjoint graph.

use std::sync::Arc;

use rand::Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// LeakyReLU slope used in attention scoring.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Elu,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => x,
            Activation::Elu => g.elu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

fn expect_cols<T: Scalar>(g: &Graph<'_, T>, x: NodeId, cols: usize, what: &str) -> Result<()> {
    let [_, c] = g.shape(x);
    if c != cols {
        return Err(Error::Shape(format!("{what}: expected {cols} input columns, got {c}")));
    }
    Ok(())
}

/// `y = x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.insert_glorot(format!("{name}.w"), d_in, d_out, rng)?;
        let b = if bias { Some(store.insert_zeros(format!("{name}.b"), 1, d_out)?) } else { None };
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId> {
        expect_cols(g, x, self.d_in, "linear")?;
        let w = g.param(self.w);
        let mut y = g.matmul(x, w);
        if let Some(b) = self.b {
            let b = g.param(b);
            y = g.add_row(y, b);
        }
        Ok(y)
    }
}

/// Stack of linear layers with a hidden activation between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `sizes` lists every width including input and output.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!("mlp `{name}` needs at least two sizes")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, hidden, output })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, mut x: NodeId) -> Result<NodeId> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x)?;
            x = if i == last { self.output.apply(g, x) } else { self.hidden.apply(g, x) };
        }
        Ok(x)
    }
}

/// Directed edges `src -> dst`; node `dst` attends over its in-neighbours.
#[derive(Clone, Debug)]
pub struct EdgeList {
    pub n_nodes: usize,
    pub dst: Arc<[usize]>,
    pub src: Arc<[usize]>,
}

impl EdgeList {
    /// Builds an edge list and adds a self-loop to every node without
    /// in-neighbours, so each softmax has at least one entry.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut has_in = vec![false; n_nodes];
        let mut dst = Vec::with_capacity(edges.len() + n_nodes);
        let mut src = Vec::with_capacity(edges.len() + n_nodes);
        for &(s, d) in edges {
            if s >= n_nodes || d >= n_nodes {
                return Err(Error::Contract(format!("edge ({s}, {d}) outside {n_nodes} nodes")));
            }
            has_in[d] = true;
            src.push(s);
            dst.push(d);
        }
        for (i, h) in has_in.iter().enumerate() {
            if !h {
                src.push(i);
                dst.push(i);
            }
        }
        Ok(Self { n_nodes, dst: dst.into(), src: src.into() })
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    Average,
    Concat,
}

/// Multi-head graph attention.
///
/// Per head `b`: `e_ij = LeakyReLU(a_dst . W_b h_i + a_src . W_b h_j)`,
/// `alpha_ij` is the softmax of `e_ij` over the in-neighbours `j` of `i`, and
/// the head output is `sum_j alpha_ij W_b h_j`. Heads are averaged or
/// concatenated, then passed through ELU.
#[derive(Clone, Debug)]
pub struct GatLayer {
    /// All head projections side by side: `d_in x (heads * d_out)`.
    pub w: ParamId,
    pub att_dst: Vec<ParamId>,
    pub att_src: Vec<ParamId>,
    pub heads: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub mode: HeadMode,
}

impl GatLayer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        heads: usize,
        mode: HeadMode,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config(format!("gat `{name}` needs at least one head")));
        }
        let w = store.insert_glorot(format!("{name}.w"), d_in, heads * d_out, rng)?;
        let mut att_dst = Vec::with_capacity(heads);
        let mut att_src = Vec::with_capacity(heads);
        for b in 0..heads {
            att_dst.push(store.insert_glorot(format!("{name}.att_dst.{b}"), d_out, 1, rng)?);
            att_src.push(store.insert_glorot(format!("{name}.att_src.{b}"), d_out, 1, rng)?);
        }
        Ok(Self { w, att_dst, att_src, heads, d_in, d_out, mode })
    }

    pub fn output_dim(&self) -> usize {
        match self.mode {
            HeadMode::Average => self.d_out,
            HeadMode::Concat => self.d_out * self.heads,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId, edges: &EdgeList) -> Result<NodeId> {
        Ok(self.forward_with_attention(g, x, edges)?.0)
    }

    /// Also returns each head's per-edge attention column (`E x 1`).
    pub fn forward_with_attention<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: NodeId,
        edges: &EdgeList,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        expect_cols(g, x, self.d_in, "gat")?;
        if g.shape(x)[0] != edges.n_nodes {
            return Err(Error::Shape(format!(
                "gat: {} feature rows for {} nodes",
                g.shape(x)[0],
                edges.n_nodes
            )));
        }
        let w = g.param(self.w);
        let wh_all = g.matmul(x, w);
        let mut outs = Vec::with_capacity(self.heads);
        let mut alphas = Vec::with_capacity(self.heads);
        for b in 0..self.heads {
            let wh = if self.heads == 1 { wh_all } else { g.slice_cols(wh_all, b * self.d_out, self.d_out) };
            let a_dst = g.param(self.att_dst[b]);
            let a_src = g.param(self.att_src[b]);
            let s_dst = g.matmul(wh, a_dst);
            let s_src = g.matmul(wh, a_src);
            let e_dst = g.gather_rows(s_dst, edges.dst.clone());
            let e_src = g.gather_rows(s_src, edges.src.clone());
            let e = g.add(e_dst, e_src);
            let e = g.leaky_relu(e, T::lit(ATTENTION_SLOPE));
            let alpha = g.segment_softmax(e, edges.dst.clone(), edges.n_nodes);
            let msg = g.gather_rows(wh, edges.src.clone());
            let msg = g.mul_col(msg, alpha);
            let agg = g.scatter_add_rows(msg, edges.dst.clone(), edges.n_nodes);
            outs.push(agg);
            alphas.push(alpha);
        }
        let combined = match self.mode {
            HeadMode::Concat => g.concat_cols(&outs),
            HeadMode::Average => {
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = g.add(acc, o);
                }
                g.scale(acc, T::lit(1.0 / self.heads as f64))
            }
        };
        Ok((g.elu(combined), alphas))
    }
}

/// Gated recurrent unit: `h' = (1 - z) * h + z * n`.
///
/// `r = sig(x W_xr + b_xr + h W_hr + b_hr)`, `z` likewise, and
/// `n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_x: store.insert_glorot(format!("{name}.w_x"), d_in, 3 * d_hidden, rng)?,
            w_h: store.insert_glorot(format!("{name}.w_h"), d_hidden, 3 * d_hidden, rng)?,
            b_x: store.insert_zeros(format!("{name}.b_x"), 1, 3 * d_hidden)?,
            b_h: store.insert_zeros(format!("{name}.b_h"), 1, 3 * d_hidden)?,
            d_in,
            d_hidden,
        })
    }

    /// Gate column order inside the packed weights: reset, update, candidate.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, h: NodeId, x: NodeId) -> Result<NodeId> {
        expect_cols(g, x, self.d_in, "gru input")?;
        expect_cols(g, h, self.d_hidden, "gru state")?;
        if g.shape(x)[0] != g.shape(h)[0] {
            return Err(Error::Shape("gru: input and state batch sizes differ".into()));
        }
        let d = self.d_hidden;
        let (w_x, w_h, b_x, b_h) = (g.param(self.w_x), g.param(self.w_h), g.param(self.b_x), g.param(self.b_h));
        let xg = g.matmul(x, w_x);
        let xg = g.add_row(xg, b_x);
        let hg = g.matmul(h, w_h);
        let hg = g.add_row(hg, b_h);
        let xrz = g.slice_cols(xg, 0, 2 * d);
        let hrz = g.slice_cols(hg, 0, 2 * d);
        let rz = g.add(xrz, hrz);
        let rz = g.sigmoid(rz);
        let r = g.slice_cols(rz, 0, d);
        let z = g.slice_cols(rz, d, d);
        let xn = g.slice_cols(xg, 2 * d, d);
        let hn = g.slice_cols(hg, 2 * d, d);
        let rhn = g.mul(r, hn);
        let n = g.add(xn, rhn);
        let n = g.tanh(n);
        let delta = g.sub(n, h);
        let step = g.mul(z, delta);
        Ok(g.add(h, step))
    }
}

/// Multi-head scaled dot-product attention with one query row per group.
///
/// Query row `q` attends over the key/value rows whose group id is `q`.
/// Head contexts are concatenated and projected by `W_O` (no bias).
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
    pub d_k: usize,
    pub d_query: usize,
    pub d_kv: usize,
    pub d_out: usize,
}

impl CrossAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_query: usize,
        d_kv: usize,
        heads: usize,
        d_k: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_k == 0 {
            return Err(Error::Config(format!("attention `{name}` needs heads and d_k > 0")));
        }
        Ok(Self {
            w_q: store.insert_glorot(format!("{name}.w_q"), d_query, heads * d_k, rng)?,
            w_k: store.insert_glorot(format!("{name}.w_k"), d_kv, heads * d_k, rng)?,
            w_v: store.insert_glorot(format!("{name}.w_v"), d_kv, heads * d_k, rng)?,
            w_o: store.insert_glorot(format!("{name}.w_o"), heads * d_k, d_out, rng)?,
            heads,
            d_k,
            d_query,
            d_kv,
            d_out,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        query: NodeId,
        kv: NodeId,
        group: Arc<[usize]>,
    ) -> Result<NodeId> {
        Ok(self.forward_with_attention(g, query, kv, group)?.0)
    }

    pub fn forward_with_attention<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        query: NodeId,
        kv: NodeId,
        group: Arc<[usize]>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        expect_cols(g, query, self.d_query, "attention query")?;
        expect_cols(g, kv, self.d_kv, "attention key/value")?;
        let n_groups = g.shape(query)[0];
        if group.len() != g.shape(kv)[0] {
            return Err(Error::Shape("attention: one group id per key row required".into()));
        }
        if let Some(&bad) = group.iter().find(|&&q| q >= n_groups) {
            return Err(Error::Contract(format!("attention group {bad} >= {n_groups} queries")));
        }
        let (w_q, w_k, w_v, w_o) = (g.param(self.w_q), g.param(self.w_k), g.param(self.w_v), g.param(self.w_o));
        let q_all = g.matmul(query, w_q);
        let k_all = g.matmul(kv, w_k);
        let v_all = g.matmul(kv, w_v);
        let inv_sqrt = T::lit(1.0 / (self.d_k as f64).sqrt());
        let mut ctx = Vec::with_capacity(self.heads);
        let mut alphas = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (off, d) = (h * self.d_k, self.d_k);
            let q = g.slice_cols(q_all, off, d);
            let k = g.slice_cols(k_all, off, d);
            let v = g.slice_cols(v_all, off, d);
            let qn = g.gather_rows(q, group.clone());
            let prod = g.mul(qn, k);
            let score = g.row_sum(prod);
            let score = g.scale(score, inv_sqrt);
            let alpha = g.segment_softmax(score, group.clone(), n_groups);
            let weighted = g.mul_col(v, alpha);
            ctx.push(g.scatter_add_rows(weighted, group.clone(), n_groups));
            alphas.push(alpha);
        }
        let cat = if ctx.len() == 1 { ctx[0] } else { g.concat_cols(&ctx) };
        Ok((g.matmul(cat, w_o), alphas))
    }
}
