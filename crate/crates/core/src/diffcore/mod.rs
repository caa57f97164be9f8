//! Minimal reverse-mode differentiation: tensors, a gradient tape, the
//! primitives the policies need, Adam, and finite-difference checking.

mod gru;
mod init;
mod optim;
mod params;
mod tape;
mod tensor;

pub mod gradcheck;
pub mod suite;

pub use gru::{gru_cell, GruParams};
pub use init::{orthogonal, POLICY_HEAD_GAIN, RELU_GAIN, TANH_GAIN};
pub use optim::{adam_step, clip_grad_norm, grad_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{ParamId, ParamStore};
pub use tape::{Activation, Bindings, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

/// `log σ`-independent part of the differential entropy of one Gaussian
/// coordinate: `½ ln(2πe)`.
pub const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

#[cfg(test)]
mod tests;
