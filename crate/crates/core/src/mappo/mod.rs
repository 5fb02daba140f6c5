//! Multi-agent PPO with a centralised critic.

pub mod adam;
pub mod gae;
pub mod loss;
pub mod rollout;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use gae::{compute_gae, mean_std, normalize};
pub use loss::{actor_loss, clipped_surrogate, clipped_value_error, critic_loss, entropy, ActorSequence, ActorStep, CriticSequence, CriticStep};
pub use rollout::{Rollout, StepRecord};
pub use trainer::{train, MetricsRow, RatioAction, TrainConfig, TrainOutcome};
