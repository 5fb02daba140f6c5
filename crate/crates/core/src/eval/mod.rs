//! Policy evaluation: episode logs, metrics and comparison tables.

pub mod compare;
pub mod metrics;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use compare::{compare, format_delta, pct_delta, Comparison, ComparisonRow};
pub use metrics::{compute_metrics, EventThresholds, MetricsReport};

use crate::action::{Action, N_ACTIONS};
use crate::env::{Decision, Env, Observation, ScenarioConfig, TerminalCause};
use crate::error::Result;
use crate::nets::{sample_action, ActorBatch, Policy};
use crate::neural::Tensor;
use crate::sim::{gap_between, RoadNetwork, WorldState};

/// What drives the CAVs during evaluation.
#[derive(Clone, Debug)]
pub enum EvalPolicy {
    /// Greedy actions of a trained actor.
    Trained(Box<Policy>),
    /// Uniform random actions.
    Random,
    /// CAVs always keep lane and speed command.
    Idle,
    /// No CAVs at all: every vehicle is an HDV.
    PureHdv,
}

impl EvalPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EvalPolicy::Trained(_) => "trained",
            EvalPolicy::Random => "random",
            EvalPolicy::Idle => "idle",
            EvalPolicy::PureHdv => "pure_hdv",
        }
    }

    /// The scenario actually run under this policy.
    pub fn scenario(&self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut s = base.clone();
        if matches!(self, EvalPolicy::PureHdv) {
            s.fleet.penetration = 0.0;
        }
        s
    }
}

/// State of one vehicle after one simulation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleRow {
    pub seed: u64,
    /// Simulation step.
    pub step: u64,
    /// Decision step the row belongs to.
    pub t: u32,
    pub time: f64,
    pub id: u32,
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub accel: f64,
    pub theta: f64,
    pub lane: usize,
    pub segment: String,
    /// Bumper gap to the nearest leader over the occupied lanes (inf if none).
    pub gap: f64,
    /// Time to collision with that leader (inf unless closing).
    pub ttc: f64,
    pub collided: bool,
    pub action: String,
    pub refined_action: String,
    pub tag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionLog {
    pub t: u32,
    pub reward: f64,
    pub decisions: BTreeMap<u32, Decision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub policy: String,
    pub n_vehicles: usize,
    pub n_cavs: usize,
    pub rows: Vec<VehicleRow>,
    pub decisions: Vec<DecisionLog>,
    pub ret: f64,
    pub cause: TerminalCause,
}

/// `upstream`, `bottleneck` or `downstream` for the segment containing `x`.
pub fn segment_label(net: &RoadNetwork, x: f64) -> &'static str {
    let i = net.segment_index(x);
    if i == 0 {
        "upstream"
    } else if i + 1 == net.segments.len() {
        "downstream"
    } else {
        "bottleneck"
    }
}

/// Nearest leader over the lanes vehicle `i` occupies, as `(gap, ttc)`.
pub fn leader_gap(world: &WorldState, i: usize) -> (f64, f64) {
    let ego = &world.vehicles[i];
    let mut best = (f64::INFINITY, f64::INFINITY);
    for lane in ego.occupied_lanes() {
        if let Some(l) = world.neighbours_in_lane(i, lane).0 {
            let lv = &world.vehicles[l];
            let gap = gap_between(ego, lv);
            if gap < best.0 {
                let closing = ego.v - lv.v;
                best = (gap, if closing > 0.0 { gap.max(0.0) / closing } else { f64::INFINITY });
            }
        }
    }
    best
}

fn snapshot(world: &WorldState, pairs: &[(u32, u32)], seed: u64, t: u32, decisions: &BTreeMap<u32, Decision>, out: &mut Vec<VehicleRow>) {
    for (i, v) in world.vehicles.iter().enumerate() {
        let (gap, ttc) = leader_gap(world, i);
        let d = decisions.get(&v.id);
        out.push(VehicleRow {
            seed,
            step: world.step_count,
            t,
            time: world.sim_time,
            id: v.id,
            kind: v.kind.as_str().to_string(),
            x: v.x,
            y: v.y,
            v: v.v,
            accel: v.accel,
            theta: v.theta,
            lane: v.lane,
            segment: segment_label(&world.network, v.x).to_string(),
            gap,
            ttc,
            collided: pairs.iter().any(|&(a, b)| a == v.id || b == v.id),
            action: d.map_or("", |d| d.proposed.as_str()).to_string(),
            refined_action: d.map_or("", |d| d.executed.as_str()).to_string(),
            tag: d.map_or("", |d| d.refinement.tag.as_str()).to_string(),
        });
    }
}

/// Runs one episode to termination.
pub fn run_episode(policy: &EvalPolicy, scenario: &ScenarioConfig, seed: u64) -> Result<EpisodeLog> {
    let sc = policy.scenario(scenario);
    let mut env = Env::reset(&sc, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e7a_1000);
    let mut hidden: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut decisions_log = Vec::new();
    snapshot(&env.world, &[], seed, 0, &BTreeMap::new(), &mut rows);
    let tau = sc.reward.tau_final;
    let mut ret = 0.0;
    while !env.is_done() {
        let agents = env.agents();
        let proposals: BTreeMap<u32, Action> = match policy {
            EvalPolicy::Trained(p) if !agents.is_empty() => {
                let obs = env.observations()?;
                let refs: Vec<&Observation> = obs.iter().collect();
                let batch = ActorBatch::new(&refs, &p.actor.cfg)?;
                let h: Vec<Vec<f64>> = agents.iter().map(|id| hidden.get(id).cloned().unwrap_or_else(|| p.actor.initial_state())).collect();
                let (logits, h_new) = p.act(&batch, Tensor::from_rows(&h)?)?;
                let mut out = BTreeMap::new();
                for (i, &id) in agents.iter().enumerate() {
                    out.insert(id, sample_action(logits.row(i), &mut rng, true)?.0);
                    hidden.insert(id, h_new.row(i).to_vec());
                }
                out
            }
            EvalPolicy::Random => agents.iter().map(|&id| Ok((id, Action::from_index(rng.random_range(0..N_ACTIONS))?))).collect::<Result<_>>()?,
            _ => agents.iter().map(|&id| (id, Action::Remain)).collect(),
        };
        let decisions = env.refine(&proposals)?;
        let t = env.t() + 1;
        let tr = env.step_observed(&decisions, tau, |w, pairs| snapshot(w, pairs, seed, t, &decisions, &mut rows))?;
        ret += tr.reward.total;
        decisions_log.push(DecisionLog { t: tr.t, reward: tr.reward.total, decisions });
    }
    Ok(EpisodeLog {
        seed,
        policy: policy.name().to_string(),
        n_vehicles: env.world.initial_count,
        n_cavs: env.n_cav_initial(),
        rows,
        decisions: decisions_log,
        ret,
        cause: env.cause().unwrap_or(TerminalCause::Horizon),
    })
}

/// Runs one episode per seed, in parallel; output order follows `seeds`.
pub fn run_episodes(policy: &EvalPolicy, scenario: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<EpisodeLog>> {
    seeds.par_iter().map(|&s| run_episode(policy, scenario, s)).collect()
}

/// Writes every vehicle row of `logs` to one CSV file.
pub fn write_rows_csv(logs: &[EpisodeLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in logs.iter().flat_map(|l| &l.rows) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<VehicleRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
