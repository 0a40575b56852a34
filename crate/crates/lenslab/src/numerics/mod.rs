//! Minimal dense-tensor substrate with reverse-mode autodiff.
//!
//! float32 everywhere, fixed sequential reduction orders, and counter-based
//! randomness: the combination makes every downstream artifact reproducible
//! bit-for-bit on a given platform.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use graph::{Gradients, Graph, VarId};
pub use optim::AdamW;
pub use params::ParamSet;
pub use rng::Rng;
pub use tensor::{Tensor, TensorError};
