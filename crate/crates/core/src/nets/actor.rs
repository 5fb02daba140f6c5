use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::N_ACTIONS;
use crate::env::observation::{context_dim, one_hot, Observation, FRAME_FEATURES, MEMORY_FEATURES};
use crate::error::{Error, Result};
use crate::neural::{Activation, EdgeList, GatLayer, Graph, GruCell, HeadMode, Linear, Mlp, NodeId, ParamStore, Tensor};
use crate::sim::VehicleKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActorConfig {
    /// Width of each interaction embedding (S_H = S_N).
    pub embed: usize,
    pub heads: usize,
    pub fusion: usize,
    pub gru_hidden: usize,
    pub history_depth: usize,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self { embed: 32, heads: 4, fusion: 64, gru_hidden: 64, history_depth: 5 }
    }
}

impl ActorConfig {
    /// History frames plus an ego flag.
    pub fn hdv_node_dim(&self) -> usize {
        self.history_depth * FRAME_FEATURES + 1
    }

    /// HDV node features plus the previous-action one-hot.
    pub fn cav_node_dim(&self) -> usize {
        self.hdv_node_dim() + N_ACTIONS
    }
}

/// Observations of several agents packed as disjoint graphs.
///
/// In each agent's HDV graph the ego node attends over itself and its HDV
/// neighbours; the CAV graph is built the same way from CAV neighbours, whose
/// node features also carry their previous action. Absent slots contribute
/// no node at all.
#[derive(Clone, Debug)]
pub struct ActorBatch {
    pub len: usize,
    pub hdv_nodes: Tensor<f64>,
    pub hdv_edges: EdgeList,
    pub hdv_ego: Arc<[usize]>,
    pub cav_nodes: Tensor<f64>,
    pub cav_edges: EdgeList,
    pub cav_ego: Arc<[usize]>,
    pub context: Tensor<f64>,
    pub memory: Tensor<f64>,
}

struct GraphBuilder {
    dim: usize,
    rows: Vec<f64>,
    edges: Vec<(usize, usize)>,
    ego: Vec<usize>,
}

impl GraphBuilder {
    fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new(), edges: Vec::new(), ego: Vec::new() }
    }

    fn node(&mut self, history: &[f64], is_ego: bool, action: Option<[f64; N_ACTIONS]>) -> usize {
        let idx = self.rows.len() / self.dim;
        self.rows.extend_from_slice(history);
        self.rows.push(f64::from(u8::from(is_ego)));
        if let Some(a) = action {
            self.rows.extend_from_slice(&a);
        }
        debug_assert_eq!(self.rows.len(), (idx + 1) * self.dim);
        idx
    }

    fn finish(self) -> Result<(Tensor<f64>, EdgeList, Arc<[usize]>)> {
        let n = self.rows.len() / self.dim;
        let edges = EdgeList::new(n, &self.edges)?;
        Ok((Tensor::new(n, self.dim, self.rows)?, edges, self.ego.into()))
    }
}

impl ActorBatch {
    pub fn new(obs: &[&Observation], cfg: &ActorConfig) -> Result<Self> {
        let frame_len = cfg.history_depth * FRAME_FEATURES;
        let mut hdv = GraphBuilder::new(cfg.hdv_node_dim());
        let mut cav = GraphBuilder::new(cfg.cav_node_dim());
        let mut context = Vec::with_capacity(obs.len() * context_dim());
        let mut memory = Vec::with_capacity(obs.len() * MEMORY_FEATURES);
        for o in obs {
            if o.ego_history.len() != frame_len {
                return Err(Error::Shape(format!(
                    "observation history has {} values, actor expects {frame_len}",
                    o.ego_history.len()
                )));
            }
            let he = hdv.node(&o.ego_history, true, None);
            hdv.edges.push((he, he));
            hdv.ego.push(he);
            let ce = cav.node(&o.ego_history, true, Some(one_hot(o.ego_prev_action)));
            cav.edges.push((ce, ce));
            cav.ego.push(ce);
            for n in o.neighbors.iter().flatten() {
                if n.history.len() != frame_len {
                    return Err(Error::Shape("neighbour history length differs from actor config".into()));
                }
                match n.kind {
                    VehicleKind::Hdv => {
                        let k = hdv.node(&n.history, false, None);
                        hdv.edges.push((k, he));
                    }
                    VehicleKind::Cav => {
                        let k = cav.node(&n.history, false, Some(one_hot(n.prev_action)));
                        cav.edges.push((k, ce));
                    }
                }
            }
            let ctx = o.context();
            if ctx.len() != context_dim() {
                return Err(Error::Shape(format!("context has {} values, expected {}", ctx.len(), context_dim())));
            }
            context.extend_from_slice(&ctx);
            memory.extend_from_slice(&o.action_memory);
        }
        let (hdv_nodes, hdv_edges, hdv_ego) = hdv.finish()?;
        let (cav_nodes, cav_edges, cav_ego) = cav.finish()?;
        Ok(Self {
            len: obs.len(),
            hdv_nodes,
            hdv_edges,
            hdv_ego,
            cav_nodes,
            cav_edges,
            cav_ego,
            context: Tensor::new(obs.len(), context_dim(), context)?,
            memory: Tensor::new(obs.len(), MEMORY_FEATURES, memory)?,
        })
    }
}

/// Intermediate nodes of one actor pass.
#[derive(Clone, Copy, Debug)]
pub struct ActorOutput {
    pub logits: NodeId,
    pub hidden: NodeId,
    pub f_hdv: NodeId,
    pub f_cav: NodeId,
    pub f_context: NodeId,
}

/// Decentralised actor shared by all CAVs.
#[derive(Clone, Debug)]
pub struct ActorNet {
    pub cfg: ActorConfig,
    pub hdv_gat: GatLayer,
    pub cav_gat: GatLayer,
    pub context: Mlp,
    pub fusion: Mlp,
    pub gru: GruCell,
    pub head: Linear,
}

impl ActorNet {
    pub fn new<R: Rng>(store: &mut ParamStore<f64>, cfg: ActorConfig, rng: &mut R) -> Result<Self> {
        let e = cfg.embed;
        Ok(Self {
            hdv_gat: GatLayer::new(store, "actor.hdv_gat", cfg.hdv_node_dim(), e, cfg.heads, HeadMode::Average, rng)?,
            cav_gat: GatLayer::new(store, "actor.cav_gat", cfg.cav_node_dim(), e, cfg.heads, HeadMode::Average, rng)?,
            context: Mlp::new(store, "actor.context", &[context_dim(), e], Activation::Elu, Activation::Elu, rng)?,
            fusion: Mlp::new(store, "actor.fusion", &[3 * e, cfg.fusion], Activation::Elu, Activation::Elu, rng)?,
            gru: GruCell::new(store, "actor.gru", cfg.fusion + MEMORY_FEATURES, cfg.gru_hidden, rng)?,
            head: Linear::new(store, "actor.head", cfg.gru_hidden, N_ACTIONS, true, rng)?,
            cfg,
        })
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.cfg.gru_hidden]
    }

    /// One step for every agent in the batch; `h` is `len x gru_hidden`.
    pub fn forward(&self, g: &mut Graph<'_, f64>, batch: &ActorBatch, h: NodeId) -> Result<ActorOutput> {
        if g.shape(h) != [batch.len, self.cfg.gru_hidden] {
            return Err(Error::Shape(format!("actor state {:?} for batch of {}", g.shape(h), batch.len)));
        }
        let hdv_x = g.input(batch.hdv_nodes.clone());
        let hdv_all = self.hdv_gat.forward(g, hdv_x, &batch.hdv_edges)?;
        let f_hdv = g.gather_rows(hdv_all, batch.hdv_ego.clone());
        let cav_x = g.input(batch.cav_nodes.clone());
        let cav_all = self.cav_gat.forward(g, cav_x, &batch.cav_edges)?;
        let f_cav = g.gather_rows(cav_all, batch.cav_ego.clone());
        let ctx_x = g.input(batch.context.clone());
        let f_context = self.context.forward(g, ctx_x)?;
        let fused_in = g.concat_cols(&[f_hdv, f_cav, f_context]);
        let fused = self.fusion.forward(g, fused_in)?;
        let mem = g.input(batch.memory.clone());
        let gru_in = g.concat_cols(&[fused, mem]);
        let hidden = self.gru.forward(g, h, gru_in)?;
        let logits = self.head.forward(g, hidden)?;
        Ok(ActorOutput { logits, hidden, f_hdv, f_cav, f_context })
    }
}
