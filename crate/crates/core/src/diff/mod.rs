//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Supplies exactly the operator set the world models need: dense and
//! convolutional affine maps, the usual activations, layer norm, structural
//! ops (concat, reshape, gather, group-sum), reductions, squared distances,
//! and a GRU cell composed from the primitives. Plus Adam and seeded
//! parameter initialization.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use init::{ParamBuilder, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
