//! Minimal reverse-mode automatic differentiation over dense f32 tensors.
//!
//! Tensors are immutable and reference counted; each operation records a
//! backward closure on its output. Calling [`Tensor::backward`] on a scalar
//! walks the recorded graph once in reverse topological order and returns the
//! gradients of every leaf created with [`Tensor::var`] (or bound from
//! [`Params`]).
//!
//! Everything runs single-threaded and in a fixed order, so results are
//! bitwise reproducible.

mod conv;
pub mod nn;
mod ops;
pub mod optim;
mod tensor;

pub use nn::{Bound, Conv2d, ConvTranspose2d, ParamId, Params};
pub use ops::{mean_tensors, sigmoid, softplus, sum_tensors};
pub use optim::{clip_grad_norm, AdamW};
pub use tensor::{BackwardFn, Gradients, Tensor};
