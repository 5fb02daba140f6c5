//! Actor and critic networks.

pub mod actor;
pub mod critic;

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use actor::{ActorBatch, ActorConfig, ActorNet, ActorOutput};
pub use critic::{CriticBatch, CriticConfig, CriticKind, CriticNet, CriticOutput};

use crate::action::{Action, N_ACTIONS};
use crate::error::{Error, Result};
use crate::neural::graph::log_softmax_in_place;
use crate::neural::{checkpoint, Graph, ParamStore, Tensor};

/// Draws from the categorical distribution over `logits`, or takes the
/// argmax (lowest index on ties) when `greedy`. Returns the log-probability
/// of the chosen action.
pub fn sample_action<R: Rng>(logits: &[f64], rng: &mut R, greedy: bool) -> Result<(Action, f64)> {
    if logits.len() != N_ACTIONS {
        return Err(Error::Shape(format!("{} logits, expected {N_ACTIONS}", logits.len())));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("action logits".into()));
    }
    let mut lp = logits.to_vec();
    log_softmax_in_place(&mut lp);
    let idx = if greedy {
        (0..N_ACTIONS).fold(0, |best, i| if logits[i] > logits[best] { i } else { best })
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = N_ACTIONS - 1;
        for (i, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                pick = i;
                break;
            }
        }
        pick
    };
    Ok((Action::from_index(idx)?, lp[idx]))
}

/// Actor and critic with their parameter stores.
#[derive(Clone, Debug)]
pub struct Policy {
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub actor_params: ParamStore<f64>,
    pub critic_params: ParamStore<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub version: u32,
    pub actor: ActorConfig,
    pub critic: CriticConfig,
}

pub const CHECKPOINT_LAYOUT_VERSION: u32 = 1;

impl Policy {
    pub fn new(actor: ActorConfig, critic: CriticConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_params = ParamStore::new();
        let mut critic_params = ParamStore::new();
        let actor = ActorNet::new(&mut actor_params, actor, &mut rng)?;
        let critic = CriticNet::new(&mut critic_params, critic, &mut rng)?;
        Ok(Self { actor, critic, actor_params, critic_params })
    }

    /// Logits (row per observation) and next recurrent states, no gradients kept.
    pub fn act(&self, batch: &ActorBatch, h: Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let mut g = Graph::new(&self.actor_params);
        let h = g.input(h);
        let out = self.actor.forward(&mut g, batch, h)?;
        g.check_finite()?;
        Ok((g.value(out.logits).clone(), g.value(out.hidden).clone()))
    }

    pub fn value(&self, batch: &CriticBatch, h: Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let mut g = Graph::new(&self.critic_params);
        let h = g.input(h);
        let out = self.critic.forward(&mut g, batch, h)?;
        g.check_finite()?;
        Ok((g.value(out.value).clone(), g.value(out.hidden).clone()))
    }

    /// Writes `meta.json`, `actor.json` and `critic.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = PolicyMeta { version: CHECKPOINT_LAYOUT_VERSION, actor: self.actor.cfg.clone(), critic: self.critic.cfg.clone() };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        checkpoint::save(&self.actor_params, &dir.join("actor.json"))?;
        checkpoint::save(&self.critic_params, &dir.join("critic.json"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: PolicyMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        if meta.version != CHECKPOINT_LAYOUT_VERSION {
            return Err(Error::Format(format!("checkpoint layout v{} is not supported", meta.version)));
        }
        let mut p = Self::new(meta.actor, meta.critic, 0)?;
        checkpoint::load_into(&mut p.actor_params, &dir.join("actor.json"))?;
        checkpoint::load_into(&mut p.critic_params, &dir.join("critic.json"))?;
        Ok(p)
    }
}
