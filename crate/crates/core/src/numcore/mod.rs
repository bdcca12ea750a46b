//! Dense tensors with reverse-mode differentiation and Adam.
//!
//! Every learnable layer of the network is expressed with the handful of
//! operations on [`Tape`]; parameters live in a [`ParamStore`] keyed by
//! hierarchical names such as `pyramid.lfa1.att0.score.w`.

mod params;
mod tape;
mod tensor;

pub use params::{global_norm, GradMap, Param, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
