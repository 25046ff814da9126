//! Dense tensors with reverse-mode gradients and forward-over-reverse
//! Hessian-vector products.

mod ops;
mod record;
mod scalar;
mod tensor;

pub use ops::{NodeId, Op};
pub use record::{ComputationRecord, Node, RecordBuilder};
pub use scalar::{Dual, Scalar};
pub use tensor::Tensor;

/// LayerNorm epsilon used throughout the toolkit.
pub const LAYER_NORM_EPS: f64 = 1e-5;
