//! Dense-tensor substrate: row-major f64 tensors with a raw file format,
//! a small feed-forward network with exact reverse-mode gradients, and an
//! Adam optimizer. Everything downstream (flow, combiner, toy encoder)
//! trains through this module.

pub mod adam;
pub mod mlp;
pub mod tensor;

pub use adam::AdamState;
pub use mlp::{LinearLayer, Mlp, MlpCache, MlpGrads};
pub use tensor::{Dtype, Tensor};
