use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::Action;
use crate::env::{Env, GlobalState, Observation, ScenarioConfig, TerminalCause};
use crate::error::Result;
use crate::nets::{sample_action, ActorBatch, CriticBatch, Policy};
use crate::neural::Tensor;
use crate::reward::temperature;

/// One decision step of one environment under the behaviour policy.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub episode: u64,
    pub agents: Vec<u32>,
    pub obs: Vec<Observation>,
    pub actor_h: Vec<Vec<f64>>,
    pub proposed: Vec<Action>,
    pub executed: Vec<Action>,
    pub log_prob_proposed: Vec<f64>,
    pub log_prob_executed: Vec<f64>,
    pub state: GlobalState,
    pub critic_h: Vec<f64>,
    pub value: f64,
    /// Team reward; on a horizon cut it also carries `gamma * V(next)`.
    pub reward: f64,
    pub done: bool,
    pub tau: f64,
    pub global_step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub ret: f64,
    pub len: u32,
    pub cause: TerminalCause,
    pub p_wes: f64,
}

/// Output of one worker for one collection phase.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub steps: Vec<StepRecord>,
    /// Value of the state after the last step (zero if it was terminal).
    pub bootstrap: f64,
    pub finished: Vec<EpisodeSummary>,
}

/// One environment with its recurrent states and random stream.
#[derive(Clone, Debug)]
pub struct Worker {
    scenario: ScenarioConfig,
    env: Env,
    rng: ChaCha8Rng,
    actor_h: BTreeMap<u32, Vec<f64>>,
    critic_h: Vec<f64>,
    episode: u64,
    ep_return: f64,
    seen: BTreeSet<u32>,
    waited: BTreeSet<u32>,
}

impl Worker {
    pub fn new(scenario: &ScenarioConfig, policy: &Policy, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = Env::reset(scenario, rng.random())?;
        let mut w = Self {
            scenario: scenario.clone(),
            env,
            rng,
            actor_h: BTreeMap::new(),
            critic_h: policy.critic.initial_state(),
            episode: 0,
            ep_return: 0.0,
            seen: BTreeSet::new(),
            waited: BTreeSet::new(),
        };
        w.note_speeds();
        Ok(w)
    }

    fn note_speeds(&mut self) {
        for v in &self.env.world.vehicles {
            self.seen.insert(v.id);
            if v.v < self.scenario.reward.v_th {
                self.waited.insert(v.id);
            }
        }
    }

    fn restart(&mut self, policy: &Policy) -> Result<()> {
        self.env = Env::reset(&self.scenario, self.rng.random())?;
        self.actor_h.clear();
        self.critic_h = policy.critic.initial_state();
        self.episode += 1;
        self.ep_return = 0.0;
        self.seen.clear();
        self.waited.clear();
        self.note_speeds();
        Ok(())
    }

    fn value(&self, policy: &Policy, state: &GlobalState) -> Result<(f64, Vec<f64>)> {
        let batch = CriticBatch::new(&[state], &policy.critic.cfg)?;
        let h = Tensor::row_vector(self.critic_h.clone());
        let (v, h) = policy.value(&batch, h)?;
        Ok((v.item(), h.into_data()))
    }

    /// Runs `n_steps` decision steps, restarting finished episodes.
    /// `global_step(t)` is the global step counter at local step `t`.
    pub fn collect(&mut self, policy: &Policy, n_steps: usize, gamma: f64, global_step: impl Fn(usize) -> u64) -> Result<Rollout> {
        let mut steps = Vec::with_capacity(n_steps);
        let mut finished = Vec::new();
        for t in 0..n_steps {
            let gs = global_step(t);
            let tau = temperature(gs, &self.scenario.reward);
            let agents = self.env.agents();
            let obs = self.env.observations()?;
            let actor_h: Vec<Vec<f64>> =
                agents.iter().map(|id| self.actor_h.get(id).cloned().unwrap_or_else(|| policy.actor.initial_state())).collect();
            let mut proposed = Vec::with_capacity(agents.len());
            let mut lp_prop = Vec::with_capacity(agents.len());
            let mut logits = None;
            if !agents.is_empty() {
                let refs: Vec<&Observation> = obs.iter().collect();
                let batch = ActorBatch::new(&refs, &policy.actor.cfg)?;
                let h = Tensor::from_rows(&actor_h)?;
                let (lg, h_new) = policy.act(&batch, h)?;
                for (i, id) in agents.iter().enumerate() {
                    let (a, lp) = sample_action(lg.row(i), &mut self.rng, false)?;
                    proposed.push(a);
                    lp_prop.push(lp);
                    self.actor_h.insert(*id, h_new.row(i).to_vec());
                }
                logits = Some(lg);
            }
            let state = self.env.global_state()?;
            let critic_h = self.critic_h.clone();
            let (value, h_next) = self.value(policy, &state)?;
            self.critic_h = h_next;

            let proposals: BTreeMap<u32, Action> = agents.iter().copied().zip(proposed.iter().copied()).collect();
            let decisions = self.env.refine(&proposals)?;
            let executed: Vec<Action> = agents.iter().map(|id| decisions[id].executed).collect();
            let lp_exec = match &logits {
                Some(lg) => executed
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let mut row = lg.row(i).to_vec();
                        crate::neural::graph::log_softmax_in_place(&mut row);
                        row[a.index()]
                    })
                    .collect(),
                None => Vec::new(),
            };
            let tr = self.env.step(&decisions, tau)?;
            self.note_speeds();
            self.actor_h.retain(|id, _| tr.decisions.contains_key(id) && self.env.world.vehicle(*id).is_some());
            let mut reward = tr.reward.total;
            self.ep_return += reward;
            if tr.cause == Some(TerminalCause::Horizon) {
                let next = self.env.global_state()?;
                reward += gamma * self.value(policy, &next)?.0;
            }
            steps.push(StepRecord {
                episode: self.episode,
                agents,
                obs,
                actor_h,
                proposed,
                executed,
                log_prob_proposed: lp_prop,
                log_prob_executed: lp_exec,
                state,
                critic_h,
                value,
                reward,
                done: tr.done,
                tau,
                global_step: gs,
            });
            if tr.done {
                finished.push(EpisodeSummary {
                    ret: self.ep_return,
                    len: self.env.t(),
                    cause: tr.cause.unwrap_or(TerminalCause::Horizon),
                    p_wes: self.waited.len() as f64 / self.seen.len().max(1) as f64,
                });
                self.restart(policy)?;
            }
        }
        let bootstrap = if steps.last().is_some_and(|s| s.done) {
            0.0
        } else {
            let s = self.env.global_state()?;
            self.value(policy, &s)?.0
        };
        Ok(Rollout { steps, bootstrap, finished })
    }
}
