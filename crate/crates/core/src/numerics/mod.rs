//! Deterministic numeric core.
//!
//! Everything here is a pure function of its inputs. Accumulations run in a
//! fixed row-major, left-to-right order so identical inputs produce
//! bit-identical outputs on every run.

mod gradcheck;
mod loss;
mod ops;
mod rng;
mod tensor;

pub use gradcheck::grad_check;
pub use loss::{cross_entropy, cross_entropy_grad, kl_divergence, softmax_t, KL_CLAMP};
pub use ops::{argmax, dense_backward, dense_forward, sgd_step, tanh_inplace, DenseGrads};
pub use rng::Rng;
pub use tensor::Tensor;
