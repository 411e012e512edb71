//! Minimal CPU neural-network toolkit: tensors, layers with manual backward,
//! losses, optimizers and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tensor;

pub use layers::{Conv, ConvTranspose, GroupNorm, Linear};
pub use params::{Grads, ParamId, ParameterSet};
pub use tensor::Tensor;

#[cfg(test)]
mod gradcheck;
