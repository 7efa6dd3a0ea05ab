//! A small convolutional network engine with explicit forward and backward
//! passes.
//!
//! Everything is generic over [`Scalar`] so the same layers train in `f32`
//! and are gradient-checked in `f64`. Tensors are channel-last
//! (`batch, height, width, channels`) [`ndarray`] arrays. Randomness
//! (initialization, dropout masks) is drawn from seeds derived with
//! [`seed::derive_seed`], so a forward pass is a pure function of
//! `(weights, input, seed, mode)`.

pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod seed;

pub use error::NnError;
pub use gradcheck::{GradCheckConfig, GradCheckReport};
pub use layers::{Layer, LayerSpec, Sequential};
pub use loss::{softmax, softmax_xent_loss};
pub use network::{BranchSpec, Network, NetworkSpec};
pub use optim::{Adam, AdamConfig};
pub use param::{NamedTensor, ParamSet, ParamTensor};
pub use scalar::Scalar;

/// Dynamic-rank tensor used at layer boundaries.
pub type Tensor<T> = ndarray::ArrayD<T>;

pub type Result<T> = std::result::Result<T, NnError>;

/// Whether a forward pass is part of training or inference.
///
/// Train mode uses batch statistics in batch normalization and applies
/// dropout; infer mode uses running statistics and disables dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}
