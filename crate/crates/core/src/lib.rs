//! Causal image modeling: patch tokens processed by uni-directional token
//! mixers, with a per-layer heading average token and inter-layer flipping.

pub mod error;
pub mod harness;
pub mod layers;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
