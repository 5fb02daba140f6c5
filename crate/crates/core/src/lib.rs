//! Multi-agent reinforcement learning for connected automated vehicles at
//! lane-reduction bottlenecks in mixed traffic.
//!
//! Layers, bottom up: [`neural`] (tape autodiff and layers), [`sim`]
//! (microscopic traffic with IDM/MOBIL drivers), [`reward`], [`psar`]
//! (safety-aware action refinement), [`env`] (the multi-agent step API),
//! [`nets`] (actor and critic), [`mappo`] (training), [`eval`] (metrics,
//! logs, policy comparison).
//!
//! The numeric kernels are generic over [`Scalar`]; the simulator and the
//! learner are fixed to `f64`, and the aliases below name those instances.

// `!(x > 0.0)` is how the validators reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod checks;
pub mod env;
pub mod error;
pub mod eval;
pub mod mappo;
pub mod nets;
pub mod neural;
pub mod scalar;
pub mod psar;
pub mod reward;
pub mod sim;

pub use action::{Action, N_ACTIONS};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = neural::Tensor<f64>;
pub type ParamStore = neural::ParamStore<f64>;
