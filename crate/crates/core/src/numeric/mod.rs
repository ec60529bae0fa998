//! Dense tensors, a tape-based reverse-mode autodiff graph, and SGD.

mod graph;
mod param;
mod sgd;
mod tensor;

pub use graph::{BatchStats, Elementwise, Graph, Var};
pub use param::{FreezeMask, Param, ParamId, Snapshot};
pub use sgd::Sgd;
pub use tensor::Tensor;

