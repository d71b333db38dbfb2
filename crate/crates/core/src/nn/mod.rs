//! Minimal deterministic neural-network engine: dense tensors, layers with
//! hand-derived gradients, optimizers, and the Gaussian latent primitives used
//! by the variational autoencoders.

pub mod checkpoint;
mod gaussian;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;
pub mod vae;

pub use gaussian::{kl_diag_gaussian, kl_grads, reparameterize, GaussianHead, LOG_SIGMA_CLAMP};
pub use layer::{Conv2d, Dense, Layer};
pub use loss::{softmax, softmax_confidence, softmax_cross_entropy};
pub use network::{Grads, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;
