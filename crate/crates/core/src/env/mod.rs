//! Multi-agent decision-step environment over the simulator.

pub mod config;
pub mod observation;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use config::ScenarioConfig;
pub use observation::{build_global_state, build_observation, lane_stats, GlobalState, LaneStats, NeighborObs, Observation};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::psar::{refine_action, Refinement, RefinementTag};
use crate::reward::{compute_reward, RewardBreakdown, TerminalEvent};
use crate::sim::{sample_fleet, CavCommand, Lateral, WorldState};

/// Proposed and executed action of one CAV for one decision step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub proposed: Action,
    pub executed: Action,
    pub refinement: Refinement,
}

impl Decision {
    /// Executes the proposal unchanged.
    pub fn direct(a: Action) -> Self {
        Self { proposed: a, executed: a, refinement: Refinement { tag: RefinementTag::None, b_lc: 0.0 } }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCause {
    AllExited,
    Collision,
    Horizon,
}

/// One decision step, serialisable as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: u32,
    pub sim_time: f64,
    pub decisions: BTreeMap<u32, Decision>,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub cause: Option<TerminalCause>,
    pub collisions: Vec<(u32, u32)>,
    pub exited: Vec<u32>,
    pub rejected_lateral: Vec<u32>,
}

impl Transition {
    pub fn write_json_line<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Env {
    pub cfg: ScenarioConfig,
    pub world: WorldState,
    t: u32,
    done: bool,
    cause: Option<TerminalCause>,
    n_cav_initial: usize,
    last: BTreeMap<u32, (Action, Action)>,
}

impl Env {
    pub fn reset(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut sim = cfg.sim.clone();
        sim.history_interval = u64::from(cfg.decision_steps);
        let world = sample_fleet(&cfg.network(), &sim, &cfg.fleet, seed)?;
        let n_cav_initial = world.cav_ids().len();
        Ok(Self { cfg: cfg.clone(), world, t: 0, done: false, cause: None, n_cav_initial, last: BTreeMap::new() })
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn cause(&self) -> Option<TerminalCause> {
        self.cause
    }

    pub fn n_cav_initial(&self) -> usize {
        self.n_cav_initial
    }

    /// Active CAV ids in ascending order.
    pub fn agents(&self) -> Vec<u32> {
        self.world.cav_ids()
    }

    pub fn last_actions(&self) -> &BTreeMap<u32, (Action, Action)> {
        &self.last
    }

    pub fn observation(&self, id: u32) -> Result<Observation> {
        build_observation(&self.world, id, &self.last)
    }

    pub fn observations(&self) -> Result<Vec<Observation>> {
        self.agents().into_iter().map(|id| self.observation(id)).collect()
    }

    pub fn global_state(&self) -> Result<GlobalState> {
        build_global_state(&self.world, self.n_cav_initial, self.t, self.cfg.horizon)
    }

    /// Applies PSAR (when enabled) to every proposal.
    pub fn refine(&self, proposed: &BTreeMap<u32, Action>) -> Result<BTreeMap<u32, Decision>> {
        proposed
            .iter()
            .map(|(&id, &a)| {
                let d = if self.cfg.psar_enabled {
                    let (executed, refinement) = refine_action(a, &self.world, id, &self.cfg.psar)?;
                    Decision { proposed: a, executed, refinement }
                } else {
                    Decision::direct(a)
                };
                Ok((id, d))
            })
            .collect()
    }

    fn command(&self, d: &Decision) -> CavCommand {
        let lateral = match d.executed {
            Action::Left => Lateral::Left,
            Action::Right => Lateral::Right,
            _ => Lateral::Stay,
        };
        let accel = match d.executed {
            Action::Accelerate => self.cfg.a_cmd,
            Action::Decelerate => -self.cfg.b_cmd,
            _ if d.refinement.tag == RefinementTag::DecelLc => -d.refinement.b_lc,
            _ => 0.0,
        };
        CavCommand { accel, lateral }
    }

    /// Advances one decision interval with one decision per active CAV.
    ///
    /// The episode ends on the first collision involving a CAV (the
    /// simulation stops at that step), when every CAV has left the road (every
    /// vehicle, if there never were CAVs), or at the horizon.
    pub fn step(&mut self, decisions: &BTreeMap<u32, Decision>, tau: f64) -> Result<Transition> {
        self.step_observed(decisions, tau, |_, _| {})
    }

    /// [`Env::step`] that also hands every simulation substep, with the
    /// collision pairs detected after it, to `observe`.
    pub fn step_observed(
        &mut self,
        decisions: &BTreeMap<u32, Decision>,
        tau: f64,
        mut observe: impl FnMut(&WorldState, &[(u32, u32)]),
    ) -> Result<Transition> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        let agents = self.agents();
        for id in decisions.keys() {
            if !agents.contains(id) {
                return Err(Error::Contract(format!("decision for vehicle {id}, which is not an active CAV")));
            }
        }
        if let Some(missing) = agents.iter().find(|id| !decisions.contains_key(id)) {
            return Err(Error::Contract(format!("no decision for CAV {missing}")));
        }
        let mut commands: BTreeMap<u32, CavCommand> = decisions.iter().map(|(&id, d)| (id, self.command(d))).collect();
        let mut exited = Vec::new();
        let mut rejected = Vec::new();
        let mut collisions = Vec::new();
        let mut cav_collision = false;
        for k in 0..self.cfg.decision_steps {
            let report = self.world.step(&commands)?;
            if k == 0 {
                rejected = report.rejected_lateral;
                for c in commands.values_mut() {
                    c.lateral = Lateral::Stay;
                }
            }
            for id in &report.exited {
                commands.remove(id);
            }
            exited.extend(report.exited);
            let pairs = self.world.detect_collisions();
            observe(&self.world, &pairs);
            if !pairs.is_empty() {
                cav_collision = pairs.iter().any(|&(a, b)| {
                    self.world.vehicle(a).is_some_and(|v| v.is_cav()) || self.world.vehicle(b).is_some_and(|v| v.is_cav())
                });
                collisions = pairs;
                if cav_collision {
                    break;
                }
            }
        }
        self.t += 1;
        self.last = decisions.iter().map(|(&id, d)| (id, (d.proposed, d.executed))).collect();
        self.last.retain(|id, _| self.world.vehicle(*id).is_some());

        let remaining = self.agents();
        let (event, cause) = if cav_collision {
            (TerminalEvent::Collision, Some(TerminalCause::Collision))
        } else if self.n_cav_initial > 0 && remaining.is_empty() {
            (TerminalEvent::AllExited, Some(TerminalCause::AllExited))
        } else if self.n_cav_initial == 0 && self.world.vehicles.is_empty() {
            (TerminalEvent::None, Some(TerminalCause::AllExited))
        } else if self.t >= self.cfg.horizon {
            (TerminalEvent::None, Some(TerminalCause::Horizon))
        } else {
            (TerminalEvent::None, None)
        };
        let reward = compute_reward(&self.world, &remaining, event, tau, &self.cfg.reward)?;
        self.done = cause.is_some();
        self.cause = cause;
        Ok(Transition {
            t: self.t,
            sim_time: self.world.sim_time,
            decisions: decisions.clone(),
            reward,
            done: self.done,
            cause,
            collisions,
            exited,
            rejected_lateral: rejected,
        })
    }

    /// Steps with actions executed as given, bypassing PSAR.
    pub fn step_actions(&mut self, actions: &BTreeMap<u32, Action>, tau: f64) -> Result<Transition> {
        let d = actions.iter().map(|(&id, &a)| (id, Decision::direct(a))).collect();
        self.step(&d, tau)
    }
}
