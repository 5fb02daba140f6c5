use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::gae::{compute_gae, mean_std};
use super::loss::{actor_loss, critic_loss, ActorSequence, ActorStep, CriticSequence, CriticStep};
use super::rollout::{Rollout, Worker};
use crate::env::{ScenarioConfig, TerminalCause};
use crate::error::{Error, Result};
use crate::nets::{ActorConfig, CriticConfig, Policy};
use crate::neural::{Graph, ParamStore};

/// Which action the importance ratio is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioAction {
    /// The actor's own sample, before refinement.
    Proposed,
    /// The action the environment executed.
    Executed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub scenario: ScenarioConfig,
    pub actor: ActorConfig,
    pub critic: CriticConfig,
    /// Budget in decision steps summed over environments.
    pub total_steps: u64,
    pub n_envs: usize,
    /// Decision steps per environment per collection phase.
    pub rollout_len: usize,
    pub epochs: usize,
    /// Sequences per gradient step.
    pub minibatch: usize,
    /// Truncated-BPTT window in decision steps.
    pub chunk_len: usize,
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub ratio_action: RatioAction,
    /// Sets the temperature annealing length to half of `total_steps`.
    pub anneal_over_half: bool,
    /// Save a checkpoint every this many updates (0: only initial and final).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            actor: ActorConfig::default(),
            critic: CriticConfig::default(),
            total_steps: 3_000_000,
            n_envs: 20,
            rollout_len: 50,
            epochs: 5,
            minibatch: 32,
            chunk_len: 10,
            lr: 5e-4,
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            max_grad_norm: 10.0,
            ratio_action: RatioAction::Proposed,
            anneal_over_half: true,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale setup: 10 vehicles, 4 CAVs.
    pub fn desk_scale(total_steps: u64, seed: u64) -> Self {
        Self { scenario: ScenarioConfig::desk_scale(), total_steps, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1)");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.lr > 0.0 && self.max_grad_norm > 0.0 && self.entropy_coef >= 0.0) {
            return bad("lr and max_grad_norm must be positive, entropy_coef non-negative");
        }
        if self.n_envs == 0 || self.rollout_len == 0 || self.minibatch == 0 || self.chunk_len == 0 {
            return bad("n_envs, rollout_len, minibatch and chunk_len must be positive");
        }
        let depth = self.scenario.sim.history_depth;
        if self.actor.history_depth != depth || self.critic.history_depth != depth {
            return bad("network history depth must match the simulator's");
        }
        if self.critic.max_lanes != self.scenario.network().max_lanes() {
            return bad("critic lane count must match the road");
        }
        Ok(())
    }

    fn effective_scenario(&self) -> ScenarioConfig {
        let mut s = self.scenario.clone();
        if self.anneal_over_half {
            s.reward.t_anneal = self.total_steps / 2;
        }
        s
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    /// Mean over episodes finished during this update's collection (NaN if none).
    pub episode_return: f64,
    pub collision_rate: f64,
    #[serde(rename = "p_WEs")]
    pub p_wes: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub tau: f64,
    pub entropy: f64,
    pub elapsed_s: f64,
    pub episodes: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub metrics: Vec<MetricsRow>,
    pub steps: u64,
}

struct Prepared<'a> {
    actor: Vec<ActorSequence<'a>>,
    critic: Vec<CriticSequence<'a>>,
}

fn prepare<'a>(rollouts: &'a [Rollout], cfg: &TrainConfig) -> Result<Prepared<'a>> {
    let mut adv_all = Vec::new();
    let mut returns_all = Vec::new();
    for r in rollouts {
        let rewards: Vec<f64> = r.steps.iter().map(|s| s.reward).collect();
        let mut values: Vec<f64> = r.steps.iter().map(|s| s.value).collect();
        values.push(r.bootstrap);
        let dones: Vec<bool> = r.steps.iter().map(|s| s.done).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, cfg.gamma, cfg.lambda)?;
        adv_all.push(adv);
        returns_all.push(ret);
    }
    // Normalise over agent-decisions, each agent sharing its step's advantage.
    let mut flat = Vec::new();
    for (r, adv) in rollouts.iter().zip(&adv_all) {
        for (s, a) in r.steps.iter().zip(adv) {
            flat.extend(std::iter::repeat_n(*a, s.agents.len()));
        }
    }
    let (mean, scale) = mean_std(&flat);

    let mut actor = Vec::new();
    let mut critic = Vec::new();
    for ((r, adv), ret) in rollouts.iter().zip(&adv_all).zip(&returns_all) {
        // Actor sequences: per (episode, agent), consecutive presence, cut at chunk_len.
        let mut open: std::collections::BTreeMap<(u64, u32), (usize, usize)> = Default::default();
        for (t, s) in r.steps.iter().enumerate() {
            for (i, &id) in s.agents.iter().enumerate() {
                let (action, old_lp) = match cfg.ratio_action {
                    RatioAction::Proposed => (s.proposed[i], s.log_prob_proposed[i]),
                    RatioAction::Executed => (s.executed[i], s.log_prob_executed[i]),
                };
                let step = ActorStep { obs: &s.obs[i], action: action.index(), old_log_prob: old_lp, advantage: (adv[t] - mean) / scale };
                let key = (s.episode, id);
                match open.get_mut(&key) {
                    Some((seq, last)) if *last + 1 == t && actor_len(&actor, *seq) < cfg.chunk_len => {
                        let seq_i = *seq;
                        let seq: &mut ActorSequence<'a> = &mut actor[seq_i];
                        seq.steps.push(step);
                        *last = t;
                    }
                    _ => {
                        actor.push(ActorSequence { h0: &s.actor_h[i], steps: vec![step] });
                        open.insert(key, (actor.len() - 1, t));
                    }
                }
            }
        }
        let mut t = 0;
        while t < r.steps.len() {
            let start = t;
            let mut seq = CriticSequence { h0: &r.steps[start].critic_h, steps: Vec::new() };
            while t < r.steps.len() && seq.steps.len() < cfg.chunk_len && r.steps[t].episode == r.steps[start].episode {
                let s = &r.steps[t];
                seq.steps.push(CriticStep { state: &s.state, old_value: s.value, ret: ret[t] });
                t += 1;
            }
            critic.push(seq);
        }
    }
    Ok(Prepared { actor, critic })
}

fn actor_len(seqs: &[ActorSequence<'_>], i: usize) -> usize {
    seqs[i].steps.len()
}

fn apply(store: &mut ParamStore<f64>, opt: &mut Adam, grads: &[Option<crate::Tensor>], max_norm: f64, what: &str) -> Result<()> {
    store.zero_grad();
    store.accumulate(grads, 1.0)?;
    if !store.grads_finite() {
        return Err(Error::Divergence(format!("non-finite {what} gradient")));
    }
    let norm = store.grad_norm();
    if norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    opt.step(store)
}

struct UpdateStats {
    actor_loss: f64,
    critic_loss: f64,
    entropy: f64,
}

fn update(policy: &mut Policy, opts: &mut (Adam, Adam), data: &Prepared<'_>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<UpdateStats> {
    let (mut a_sum, mut c_sum, mut e_sum, mut a_n, mut c_n) = (0.0, 0.0, 0.0, 0usize, 0usize);
    let mut a_idx: Vec<usize> = (0..data.actor.len()).collect();
    let mut c_idx: Vec<usize> = (0..data.critic.len()).collect();
    for _ in 0..cfg.epochs {
        a_idx.shuffle(rng);
        c_idx.shuffle(rng);
        for mb in a_idx.chunks(cfg.minibatch) {
            let seqs: Vec<ActorSequence<'_>> = mb.iter().map(|&i| data.actor[i].clone()).collect();
            let grads = {
                let mut g = Graph::new(&policy.actor_params);
                let out = actor_loss(&mut g, &policy.actor, &seqs, cfg.clip_eps, cfg.entropy_coef)?;
                let loss = g.value(out.loss).item();
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!("actor loss is {loss}")));
                }
                a_sum += loss;
                e_sum += g.value(out.entropy).item();
                a_n += 1;
                g.backward(out.loss)
            };
            apply(&mut policy.actor_params, &mut opts.0, grads.params(), cfg.max_grad_norm, "actor")?;
        }
        for mb in c_idx.chunks(cfg.minibatch) {
            let seqs: Vec<CriticSequence<'_>> = mb.iter().map(|&i| data.critic[i].clone()).collect();
            let grads = {
                let mut g = Graph::new(&policy.critic_params);
                let loss = critic_loss(&mut g, &policy.critic, &seqs, cfg.clip_eps)?;
                let v = g.value(loss).item();
                if !v.is_finite() {
                    return Err(Error::Divergence(format!("critic loss is {v}")));
                }
                c_sum += v;
                c_n += 1;
                g.backward(loss)
            };
            apply(&mut policy.critic_params, &mut opts.1, grads.params(), cfg.max_grad_norm, "critic")?;
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(UpdateStats { actor_loss: avg(a_sum, a_n), critic_loss: avg(c_sum, c_n), entropy: avg(e_sum, a_n) })
}

/// Trains from scratch. With `out_dir`, writes `metrics.csv` and checkpoint
/// directories `checkpoints/step_<n>` (the last one is also copied to
/// `final`). `on_row` sees every metrics row as it is produced.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>, mut on_row: impl FnMut(&MetricsRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let scenario = cfg.effective_scenario();
    let start = Instant::now();
    let mut policy = Policy::new(cfg.actor.clone(), cfg.critic.clone(), cfg.seed)?;
    let mut opts = (
        Adam::new(&policy.actor_params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() }),
        Adam::new(&policy.critic_params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() }),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1ea2);
    let mut workers = (0..cfg.n_envs).map(|_| Worker::new(&scenario, &policy, rng.random())).collect::<Result<Vec<_>>>()?;

    let mut writer = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Some(csv::Writer::from_path(d.join("metrics.csv"))?)
        }
        None => None,
    };
    let save = |p: &Policy, step: u64| -> Result<()> {
        if let Some(d) = out_dir {
            p.save(&checkpoint_dir(d, step))?;
        }
        Ok(())
    };
    save(&policy, 0)?;

    let mut steps = 0u64;
    let mut metrics = Vec::new();
    let mut updates = 0usize;
    let n_envs = cfg.n_envs as u64;
    while steps < cfg.total_steps {
        let remaining = cfg.total_steps - steps;
        let len = (cfg.rollout_len as u64).min(remaining.div_ceil(n_envs)) as usize;
        let base = steps;
        let snapshot = &policy;
        let rollouts = workers
            .par_iter_mut()
            .enumerate()
            .map(|(w, worker)| worker.collect(snapshot, len, cfg.gamma, |t| base + t as u64 * n_envs + w as u64))
            .collect::<Result<Vec<_>>>()?;
        steps += len as u64 * n_envs;
        let tau = rollouts.iter().flat_map(|r| r.steps.last()).map(|s| s.tau).fold(f64::NAN, f64::min);

        let stats = {
            let data = prepare(&rollouts, cfg)?;
            update(&mut policy, &mut opts, &data, cfg, &mut rng)?
        };
        updates += 1;

        let finished: Vec<_> = rollouts.iter().flat_map(|r| r.finished.iter()).collect();
        let n = finished.len();
        let mean = |f: &dyn Fn(&super::rollout::EpisodeSummary) -> f64| {
            if n == 0 { f64::NAN } else { finished.iter().map(|e| f(e)).sum::<f64>() / n as f64 }
        };
        let row = MetricsRow {
            step: steps,
            episode_return: mean(&|e| e.ret),
            collision_rate: mean(&|e| f64::from(u8::from(e.cause == TerminalCause::Collision))),
            p_wes: mean(&|e| e.p_wes),
            actor_loss: stats.actor_loss,
            critic_loss: stats.critic_loss,
            tau,
            entropy: stats.entropy,
            elapsed_s: start.elapsed().as_secs_f64(),
            episodes: n,
        };
        if let Some(w) = writer.as_mut() {
            w.serialize(&row)?;
            w.flush()?;
        }
        on_row(&row);
        metrics.push(row);
        if cfg.checkpoint_every > 0 && updates.is_multiple_of(cfg.checkpoint_every) {
            save(&policy, steps)?;
        }
    }
    if steps > 0 {
        save(&policy, steps)?;
    }
    if let Some(d) = out_dir {
        policy.save(&d.join("final"))?;
        let mut f = std::fs::File::create(d.join("train_config.json"))?;
        f.write_all(serde_json::to_string_pretty(cfg)?.as_bytes())?;
    }
    Ok(TrainOutcome { policy, metrics, steps })
}

pub fn checkpoint_dir(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{step:09}"))
}
