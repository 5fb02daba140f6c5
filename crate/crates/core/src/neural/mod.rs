//! Small reverse-mode differentiation kernel and the layers built on it.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use layers::{Activation, CrossAttention, EdgeList, GatLayer, GruCell, HeadMode, Linear, Mlp};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
