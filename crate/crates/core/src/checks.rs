//! Self-checks shared by the test suite and the command line.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::{Action, N_ACTIONS};
use crate::env::{Env, GlobalState, Observation, ScenarioConfig};
use crate::error::Result;
use crate::mappo::{actor_loss, critic_loss, ActorSequence, ActorStep, CriticSequence, CriticStep};
use crate::nets::{ActorConfig, ActorNet, CriticConfig, CriticNet};
use crate::neural::{grad_check, CrossAttention, EdgeList, GatLayer, GradCheckConfig, GradCheckReport, Graph, GruCell, HeadMode, Linear, NodeId, ParamStore, Tensor};

/// Observations and global states from a short random-policy run.
#[derive(Clone, Debug)]
pub struct SampleTrajectory {
    /// `obs[t][i]` is agent `agents[t][i]` at decision `t`.
    pub agents: Vec<Vec<u32>>,
    pub obs: Vec<Vec<Observation>>,
    pub states: Vec<GlobalState>,
}

pub fn sample_trajectory(scenario: &ScenarioConfig, seed: u64, steps: usize) -> Result<SampleTrajectory> {
    let mut env = Env::reset(scenario, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SampleTrajectory { agents: Vec::new(), obs: Vec::new(), states: Vec::new() };
    for _ in 0..steps {
        if env.is_done() {
            break;
        }
        out.agents.push(env.agents());
        out.obs.push(env.observations()?);
        out.states.push(env.global_state()?);
        // Mostly keep lane so the trajectory lasts.
        let actions: BTreeMap<u32, Action> = env
            .agents()
            .into_iter()
            .map(|id| (id, if rng.random_bool(0.2) { Action::Decelerate } else { Action::Remain }))
            .collect();
        let d = env.refine(&actions)?;
        env.step(&d, 1.0)?;
    }
    Ok(out)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `sum(out * probe)`: a scalar whose gradient reaches every output entry.
fn probe(g: &mut Graph<'_, f64>, out: NodeId, probe: &Tensor<f64>) -> NodeId {
    let p = g.input(probe.clone());
    let m = g.mul(out, p);
    g.sum(m)
}

/// Finite-difference checks of every trainable block and both losses.
pub fn gradient_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let cfg = GradCheckConfig { seed, ..GradCheckConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    {
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "affine", 6, 4, true, &mut rng)?;
        let x = random_tensor(&mut rng, 5, 6);
        let pr = random_tensor(&mut rng, 5, 4);
        let r = grad_check(
            &mut store,
            |g| {
                let x = g.input(x.clone());
                let y = layer.forward(g, x)?;
                Ok(probe(g, y, &pr))
            },
            &cfg,
        )?;
        out.push(("affine".to_string(), r));
    }

    let n = 7;
    let edges = EdgeList::new(n, &[(1, 0), (2, 0), (3, 0), (0, 0), (0, 4), (5, 4), (4, 4), (6, 5), (2, 3)])?;
    for (mode, heads, label) in [(HeadMode::Average, 4, "gat_average"), (HeadMode::Concat, 3, "gat_concat")] {
        let mut store = ParamStore::new();
        let layer = GatLayer::new(&mut store, label, 5, 4, heads, mode, &mut rng)?;
        let x = random_tensor(&mut rng, n, 5);
        let width = if mode == HeadMode::Concat { 4 * heads } else { 4 };
        let pr = random_tensor(&mut rng, n, width);
        let r = grad_check(
            &mut store,
            |g| {
                let x = g.input(x.clone());
                let y = layer.forward(g, x, &edges)?;
                Ok(probe(g, y, &pr))
            },
            &cfg,
        )?;
        out.push((label.to_string(), r));
    }

    {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 4, 6, &mut rng)?;
        let xs: Vec<_> = (0..3).map(|_| random_tensor(&mut rng, 3, 4)).collect();
        let h0 = random_tensor(&mut rng, 3, 6);
        let pr = random_tensor(&mut rng, 3, 6);
        let r = grad_check(
            &mut store,
            |g| {
                let mut h = g.input(h0.clone());
                for x in &xs {
                    let x = g.input(x.clone());
                    h = cell.forward(g, h, x)?;
                }
                Ok(probe(g, h, &pr))
            },
            &cfg,
        )?;
        out.push(("gru_cell".to_string(), r));
    }

    {
        let mut store = ParamStore::new();
        let attn = CrossAttention::new(&mut store, "cross_attention", 6, 5, 2, 3, 4, &mut rng)?;
        let q = random_tensor(&mut rng, 2, 6);
        let kv = random_tensor(&mut rng, 7, 5);
        let group: Arc<[usize]> = vec![0, 0, 0, 1, 1, 1, 1].into();
        let pr = random_tensor(&mut rng, 2, 4);
        let r = grad_check(
            &mut store,
            |g| {
                let q = g.input(q.clone());
                let kv = g.input(kv.clone());
                let y = attn.forward(g, q, kv, group.clone())?;
                Ok(probe(g, y, &pr))
            },
            &cfg,
        )?;
        out.push(("cross_attention".to_string(), r));
    }

    let scenario = ScenarioConfig::desk_scale();
    let traj = sample_trajectory(&scenario, seed, 4)?;
    {
        let mut store = ParamStore::new();
        let actor = ActorNet::new(&mut store, ActorConfig::default(), &mut rng)?;
        let h0: Vec<Vec<f64>> = (0..2).map(|_| (0..64).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
        let mut steps: Vec<Vec<(usize, f64, f64)>> = Vec::new();
        for len in [3usize, 2] {
            steps.push((0..len).map(|_| (rng.random_range(0..N_ACTIONS), rng.random_range(-2.0..-1.0), rng.random_range(-1.5..1.5))).collect());
        }
        let seqs: Vec<ActorSequence<'_>> = steps
            .iter()
            .enumerate()
            .map(|(k, s)| ActorSequence {
                h0: &h0[k],
                steps: s
                    .iter()
                    .enumerate()
                    .map(|(t, &(action, old_log_prob, advantage))| ActorStep { obs: &traj.obs[t][k], action, old_log_prob, advantage })
                    .collect(),
            })
            .collect();
        let r = grad_check(&mut store, |g| Ok(actor_loss(g, &actor, &seqs, 0.2, 0.01)?.loss), &cfg)?;
        out.push(("actor_loss".to_string(), r));
    }
    {
        let mut store = ParamStore::new();
        let critic = CriticNet::new(&mut store, CriticConfig::default(), &mut rng)?;
        let h0: Vec<f64> = (0..64).map(|_| rng.random_range(-0.5..0.5)).collect();
        let seq = CriticSequence {
            h0: &h0,
            steps: traj
                .states
                .iter()
                .map(|s| CriticStep { state: s, old_value: rng.random_range(-0.5..0.5), ret: rng.random_range(-2.0..2.0) })
                .collect(),
        };
        let r = grad_check(&mut store, |g| critic_loss(g, &critic, std::slice::from_ref(&seq), 0.2), &cfg)?;
        out.push(("critic_loss".to_string(), r));
    }
    Ok(out)
}
