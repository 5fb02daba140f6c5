use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::observation::{global_dynamic_dim, global_node_dim, GlobalState, STATIC_FEATURES};
use crate::error::{Error, Result};
use crate::neural::{Activation, CrossAttention, EdgeList, GatLayer, Graph, GruCell, HeadMode, Linear, Mlp, NodeId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// Traffic-feature query attending over a global interaction graph.
    Itdr,
    /// Plain MLP over road, lane statistics and mean node features.
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub kind: CriticKind,
    pub embed: usize,
    pub gat_heads: usize,
    pub attn_heads: usize,
    pub d_k: usize,
    pub gru_hidden: usize,
    pub history_depth: usize,
    pub max_lanes: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { kind: CriticKind::Itdr, embed: 32, gat_heads: 1, attn_heads: 4, d_k: 8, gru_hidden: 64, history_depth: 5, max_lanes: 4 }
    }
}

/// Several global states packed into one disjoint graph.
#[derive(Clone, Debug)]
pub struct CriticBatch {
    pub len: usize,
    pub nodes: Tensor<f64>,
    pub edges: EdgeList,
    /// State index of every node.
    pub group: Arc<[usize]>,
    pub static_road: Tensor<f64>,
    pub dynamic: Tensor<f64>,
}

impl CriticBatch {
    pub fn new(states: &[&GlobalState], cfg: &CriticConfig) -> Result<Self> {
        let node_dim = global_node_dim(cfg.history_depth);
        let dyn_dim = global_dynamic_dim(cfg.max_lanes);
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut group = Vec::new();
        let mut stat = Vec::with_capacity(states.len() * STATIC_FEATURES);
        let mut dynamic = Vec::with_capacity(states.len() * dyn_dim);
        for (b, s) in states.iter().enumerate() {
            if s.node_dim != node_dim || s.dynamic.len() != dyn_dim || s.static_road.len() != STATIC_FEATURES {
                return Err(Error::Shape("global state layout differs from critic config".into()));
            }
            let offset = group.len();
            nodes.extend_from_slice(&s.nodes);
            group.extend(std::iter::repeat_n(b, s.ids.len()));
            edges.extend(s.edges.iter().map(|&(src, dst)| (src + offset, dst + offset)));
            stat.extend_from_slice(&s.static_road);
            dynamic.extend_from_slice(&s.dynamic);
        }
        let n = group.len();
        Ok(Self {
            len: states.len(),
            nodes: Tensor::new(n, node_dim, nodes)?,
            edges: EdgeList::new(n, &edges)?,
            group: group.into(),
            static_road: Tensor::new(states.len(), STATIC_FEATURES, stat)?,
            dynamic: Tensor::new(states.len(), dyn_dim, dynamic)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CriticOutput {
    /// `len x 1`.
    pub value: NodeId,
    pub hidden: NodeId,
}

#[derive(Clone, Debug)]
enum Body {
    Itdr { static_mlp: Mlp, dynamic_mlp: Mlp, gat: GatLayer, attention: CrossAttention },
    Mlp { mlp: Mlp },
}

/// Centralised value function over the global state.
#[derive(Clone, Debug)]
pub struct CriticNet {
    pub cfg: CriticConfig,
    body: Body,
    pub gru: GruCell,
    pub head: Linear,
}

impl CriticNet {
    pub fn new<R: Rng>(store: &mut ParamStore<f64>, cfg: CriticConfig, rng: &mut R) -> Result<Self> {
        let e = cfg.embed;
        let node_dim = global_node_dim(cfg.history_depth);
        let dyn_dim = global_dynamic_dim(cfg.max_lanes);
        let feat = 2 * e;
        let body = match cfg.kind {
            CriticKind::Itdr => Body::Itdr {
                static_mlp: Mlp::new(store, "critic.static", &[STATIC_FEATURES, e], Activation::Elu, Activation::Elu, rng)?,
                dynamic_mlp: Mlp::new(store, "critic.dynamic", &[dyn_dim, e], Activation::Elu, Activation::Elu, rng)?,
                gat: GatLayer::new(store, "critic.gat", node_dim, e, cfg.gat_heads, HeadMode::Average, rng)?,
                attention: CrossAttention::new(store, "critic.attention", feat, e, cfg.attn_heads, cfg.d_k, feat, rng)?,
            },
            CriticKind::Mlp => Body::Mlp {
                mlp: Mlp::new(
                    store,
                    "critic.mlp",
                    &[STATIC_FEATURES + dyn_dim + node_dim, feat, feat],
                    Activation::Elu,
                    Activation::Elu,
                    rng,
                )?,
            },
        };
        Ok(Self {
            gru: GruCell::new(store, "critic.gru", feat, cfg.gru_hidden, rng)?,
            head: Linear::new(store, "critic.head", cfg.gru_hidden, 1, true, rng)?,
            body,
            cfg,
        })
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.cfg.gru_hidden]
    }

    pub fn forward(&self, g: &mut Graph<'_, f64>, batch: &CriticBatch, h: NodeId) -> Result<CriticOutput> {
        if g.shape(h) != [batch.len, self.cfg.gru_hidden] {
            return Err(Error::Shape(format!("critic state {:?} for batch of {}", g.shape(h), batch.len)));
        }
        let nodes = g.input(batch.nodes.clone());
        let stat = g.input(batch.static_road.clone());
        let dynamic = g.input(batch.dynamic.clone());
        let feature = match &self.body {
            Body::Itdr { static_mlp, dynamic_mlp, gat, attention } => {
                let fs = static_mlp.forward(g, stat)?;
                let fd = dynamic_mlp.forward(g, dynamic)?;
                let f_tf = g.concat_cols(&[fs, fd]);
                let h_nodes = gat.forward(g, nodes, &batch.edges)?;
                attention.forward(g, f_tf, h_nodes, batch.group.clone())?
            }
            Body::Mlp { mlp } => {
                let counts = group_counts(&batch.group, batch.len);
                let summed = g.scatter_add_rows(nodes, batch.group.clone(), batch.len);
                let inv = g.input(Tensor::column(counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect()));
                let mean = g.mul_col(summed, inv);
                let x = g.concat_cols(&[stat, dynamic, mean]);
                mlp.forward(g, x)?
            }
        };
        let hidden = self.gru.forward(g, h, feature)?;
        let value = self.head.forward(g, hidden)?;
        Ok(CriticOutput { value, hidden })
    }
}

fn group_counts(group: &[usize], n: usize) -> Vec<usize> {
    let mut c = vec![0; n];
    for &g in group {
        c[g] += 1;
    }
    c
}
