//! Per-CAV local observations and the critic's global state.
//!
//! All features are scaled by fixed constants. Positions relative to the
//! ego vehicle use [`REL_X_SCALE`] and the lane width rather than the road
//! length, since following gaps of a few metres would otherwise vanish.

use serde::{Deserialize, Serialize};

use crate::action::{Action, N_ACTIONS};
use crate::error::{Error, Result};
use crate::sim::{KinState, RoadNetwork, VehicleKind, WorldState, VEHICLE_LENGTH};

pub const SPEED_SCALE: f64 = 25.0;
pub const REL_X_SCALE: f64 = 50.0;
/// Jam density `1 / (L_veh + s0)` of the normal style, vehicles per metre.
pub const JAM_DENSITY: f64 = 1.0 / (VEHICLE_LENGTH + 2.0);
/// Features per history frame: four kinematic values and a presence flag.
pub const FRAME_FEATURES: usize = 5;
pub const SELF_FEATURES: usize = 8;
pub const LANE_FEATURES: usize = 5;
pub const MAX_SEGMENTS: usize = 4;
pub const STATIC_FEATURES: usize = 3 * MAX_SEGMENTS;
pub const MEMORY_FEATURES: usize = 2 * N_ACTIONS;

pub fn one_hot(a: Option<Action>) -> [f64; N_ACTIONS] {
    let mut v = [0.0; N_ACTIONS];
    if let Some(a) = a {
        v[a.index()] = 1.0;
    }
    v
}

/// Raw per-lane statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneStats {
    pub n: usize,
    /// Vehicles per metre of the lane's existing length.
    pub density: f64,
    pub mean_speed: f64,
    /// CAV share of the lane's vehicles.
    pub penetration: f64,
}

/// Counts every vehicle whose `lane` is `l`, anywhere on the road.
pub fn lane_stats(world: &WorldState, l: usize) -> LaneStats {
    let in_lane: Vec<_> = world.vehicles.iter().filter(|v| v.lane == l).collect();
    let n = in_lane.len();
    if n == 0 {
        return LaneStats { n: 0, density: 0.0, mean_speed: 0.0, penetration: 0.0 };
    }
    let length = world.network.lane_length(l);
    LaneStats {
        n,
        density: if length > 0.0 { n as f64 / length } else { 0.0 },
        mean_speed: in_lane.iter().map(|v| v.v).sum::<f64>() / n as f64,
        penetration: in_lane.iter().filter(|v| v.is_cav()).count() as f64 / n as f64,
    }
}

fn lane_block(world: &WorldState, lane: Option<usize>, x: f64) -> [f64; LANE_FEATURES] {
    match lane {
        Some(l) if world.network.lane_exists(l, x) => {
            let s = lane_stats(world, l);
            [
                1.0,
                s.n as f64 / world.initial_count.max(1) as f64,
                s.density / JAM_DENSITY,
                s.mean_speed / SPEED_SCALE,
                s.penetration,
            ]
        }
        _ => [0.0; LANE_FEATURES],
    }
}

/// Segment boundaries and lane counts, zero padded to [`MAX_SEGMENTS`].
pub fn static_road(network: &RoadNetwork) -> Vec<f64> {
    let mut out = vec![0.0; STATIC_FEATURES];
    let lanes = network.max_lanes().max(1) as f64;
    for (k, s) in network.segments.iter().take(MAX_SEGMENTS).enumerate() {
        out[3 * k] = s.start / network.total_length;
        out[3 * k + 1] = s.end / network.total_length;
        out[3 * k + 2] = s.lanes as f64 / lanes;
    }
    out
}

fn rel_frame(state: Option<&KinState>, ego: &KinState, lane_width: f64) -> [f64; FRAME_FEATURES] {
    match state {
        Some(s) => [
            (s.x - ego.x) / REL_X_SCALE,
            (s.y - ego.y) / lane_width,
            (s.v - ego.v) / SPEED_SCALE,
            s.theta,
            1.0,
        ],
        None => [0.0; FRAME_FEATURES],
    }
}

/// One occupied neighbour slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborObs {
    pub slot: usize,
    pub id: u32,
    pub kind: VehicleKind,
    /// Raw relatives at the current step, metres and m/s.
    pub dx: f64,
    pub dy: f64,
    pub dv: f64,
    pub theta: f64,
    /// `history_depth` frames, oldest first, relative to the ego's current state.
    pub history: Vec<f64>,
    /// Last executed action of a neighbouring CAV.
    pub prev_action: Option<Action>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: u32,
    pub self_state: Vec<f64>,
    /// The ego's own history, relative to its current state.
    pub ego_history: Vec<f64>,
    pub ego_prev_action: Option<Action>,
    pub neighbors: [Option<NeighborObs>; 6],
    /// Ego, left and right lanes.
    pub lane_stats: [[f64; LANE_FEATURES]; 3],
    pub static_road: Vec<f64>,
    /// One-hot proposed then executed action of the previous step.
    pub action_memory: [f64; MEMORY_FEATURES],
}

impl Observation {
    /// Context input: self state, lane statistics, static road.
    pub fn context(&self) -> Vec<f64> {
        let mut v = self.self_state.clone();
        for l in &self.lane_stats {
            v.extend_from_slice(l);
        }
        v.extend_from_slice(&self.static_road);
        v
    }

    pub fn mask(&self) -> [bool; 6] {
        self.neighbors.each_ref().map(Option::is_some)
    }

    /// Fixed-length flat encoding; absent slots are zeros with a zero mask.
    pub fn flat(&self, history_depth: usize) -> Vec<f64> {
        let mut v = self.context();
        v.extend_from_slice(&self.ego_history);
        v.extend_from_slice(&self.action_memory);
        for n in &self.neighbors {
            match n {
                Some(n) => {
                    v.push(1.0);
                    v.push(f64::from(u8::from(n.kind == VehicleKind::Cav)));
                    v.extend_from_slice(&n.history);
                    v.extend_from_slice(&one_hot(n.prev_action));
                }
                None => v.extend(std::iter::repeat_n(0.0, 2 + history_depth * FRAME_FEATURES + N_ACTIONS)),
            }
        }
        v
    }
}

pub fn context_dim() -> usize {
    SELF_FEATURES + 3 * LANE_FEATURES + STATIC_FEATURES
}

/// Per-frame kinematics of `id`, oldest first, padded at the front.
fn history_of(world: &WorldState, id: u32) -> Vec<Option<KinState>> {
    let depth = world.cfg.history_depth;
    let mut frames: Vec<Option<KinState>> = world.history.iter().map(|f| f.states.get(&id).copied()).collect();
    while frames.len() < depth {
        frames.insert(0, None);
    }
    frames
}

fn self_state(world: &WorldState, id: u32) -> Result<Vec<f64>> {
    let v = world.vehicle(id).ok_or_else(|| Error::Contract(format!("no vehicle {id}")))?;
    let net = &world.network;
    let lanes = net.max_lanes().max(1) as f64;
    let to_end = net.distance_to_lane_end(v.lane, v.x);
    let look = world.cfg.lookahead.max(1.0);
    Ok(vec![
        v.x / net.total_length,
        v.y / (net.lane_width * lanes),
        v.v / SPEED_SCALE,
        v.theta,
        v.lane as f64 / (lanes - 1.0).max(1.0),
        to_end.min(look) / look,
        f64::from(u8::from(to_end <= look)),
        f64::from(u8::from(v.lane_change.is_some())),
    ])
}

/// Observation of CAV `id`. `last` maps CAV ids to their previous
/// (proposed, executed) actions.
pub fn build_observation(
    world: &WorldState,
    id: u32,
    last: &std::collections::BTreeMap<u32, (Action, Action)>,
) -> Result<Observation> {
    let ego = world.vehicle(id).ok_or_else(|| Error::Contract(format!("no vehicle {id}")))?;
    if !ego.is_cav() {
        return Err(Error::Contract(format!("vehicle {id} is not a CAV")));
    }
    let ego_now = KinState::of(ego);
    let lw = world.network.lane_width;
    let flatten = |frames: Vec<Option<KinState>>| -> Vec<f64> {
        frames.iter().flat_map(|f| rel_frame(f.as_ref(), &ego_now, lw)).collect()
    };
    let slots = world.neighbor_slots(id)?;
    let mut neighbors: [Option<NeighborObs>; 6] = Default::default();
    for (slot, nid) in slots.iter().enumerate() {
        let Some(nid) = *nid else { continue };
        let n = world.vehicle(nid).expect("slot ids are active");
        neighbors[slot] = Some(NeighborObs {
            slot,
            id: nid,
            kind: n.kind,
            dx: n.x - ego.x,
            dy: n.y - ego.y,
            dv: n.v - ego.v,
            theta: n.theta,
            history: flatten(history_of(world, nid)),
            prev_action: if n.is_cav() { last.get(&nid).map(|p| p.1) } else { None },
        });
    }
    let lane_stats = [
        lane_block(world, Some(ego.lane), ego.x),
        lane_block(world, Some(ego.lane + 1), ego.x),
        lane_block(world, ego.lane.checked_sub(1), ego.x),
    ];
    let mine = last.get(&id).copied();
    let mut action_memory = [0.0; MEMORY_FEATURES];
    action_memory[..N_ACTIONS].copy_from_slice(&one_hot(mine.map(|m| m.0)));
    action_memory[N_ACTIONS..].copy_from_slice(&one_hot(mine.map(|m| m.1)));
    Ok(Observation {
        agent: id,
        self_state: self_state(world, id)?,
        ego_history: flatten(history_of(world, id)),
        ego_prev_action: mine.map(|m| m.1),
        neighbors,
        lane_stats,
        static_road: static_road(&world.network),
        action_memory,
    })
}

/// Features per global-graph node: history frames plus a CAV flag.
pub fn global_node_dim(history_depth: usize) -> usize {
    history_depth * FRAME_FEATURES + 1
}

/// Lane statistics of every base lane plus fleet aggregates.
pub fn global_dynamic_dim(max_lanes: usize) -> usize {
    4 * max_lanes + 4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub ids: Vec<u32>,
    /// Row-major `ids.len() x node_dim`.
    pub nodes: Vec<f64>,
    pub node_dim: usize,
    /// Directed `(src, dst)` node indices: `dst` attends over `src`, i.e.
    /// `src` is in the six-neighbour set of `dst`.
    pub edges: Vec<(usize, usize)>,
    pub static_road: Vec<f64>,
    pub dynamic: Vec<f64>,
}

pub fn build_global_state(world: &WorldState, n_cav_initial: usize, t: u32, horizon: u32) -> Result<GlobalState> {
    let net = &world.network;
    let lanes = net.max_lanes().max(1);
    let depth = world.cfg.history_depth;
    let node_dim = global_node_dim(depth);
    let ids: Vec<u32> = world.vehicles.iter().map(|v| v.id).collect();
    let mut nodes = Vec::with_capacity(ids.len() * node_dim);
    for v in &world.vehicles {
        for f in history_of(world, v.id) {
            match f {
                Some(s) => nodes.extend_from_slice(&[
                    s.x / net.total_length,
                    s.y / (net.lane_width * lanes as f64),
                    s.v / SPEED_SCALE,
                    s.theta,
                    1.0,
                ]),
                None => nodes.extend_from_slice(&[0.0; FRAME_FEATURES]),
            }
        }
        nodes.push(f64::from(u8::from(v.is_cav())));
    }
    let mut edges = Vec::new();
    for (dst, v) in world.vehicles.iter().enumerate() {
        for nid in world.neighbor_slots(v.id)?.into_iter().flatten() {
            let src = world.index_of(nid).expect("slot ids are active");
            edges.push((src, dst));
        }
    }
    let mut dynamic = Vec::with_capacity(global_dynamic_dim(lanes));
    for l in 0..lanes {
        let s = lane_stats(world, l);
        dynamic.extend_from_slice(&[
            s.n as f64 / world.initial_count.max(1) as f64,
            s.density / JAM_DENSITY,
            s.mean_speed / SPEED_SCALE,
            s.penetration,
        ]);
    }
    let cavs: Vec<f64> = world.vehicles.iter().filter(|v| v.is_cav()).map(|v| v.v).collect();
    dynamic.push(world.vehicles.len() as f64 / world.initial_count.max(1) as f64);
    dynamic.push(cavs.len() as f64 / n_cav_initial.max(1) as f64);
    dynamic.push(if cavs.is_empty() { 0.0 } else { cavs.iter().sum::<f64>() / cavs.len() as f64 / SPEED_SCALE });
    dynamic.push(f64::from(t) / f64::from(horizon.max(1)));
    Ok(GlobalState { ids, nodes, node_dim, edges, static_road: static_road(net), dynamic })
}
