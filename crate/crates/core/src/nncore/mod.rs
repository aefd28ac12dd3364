//! Minimal differentiable kernel: tensors, a recorded graph with reverse-mode
//! gradients, AdamW, and a flat checkpoint format.

mod adamw;
pub mod checkpoint;
mod graph;
pub mod kernels;
mod real;
mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use graph::{Graph, NormMode, NormStats, RunningStats, Var, NORM_EPS, NORM_MOMENTUM};
pub use real::Real;
pub use tensor::Tensor;
