//! Core library: confounded 2D ball-world simulation, bit-exact persistence,
//! a small autodiff engine, latent world models with confounder estimation,
//! ranking evaluation, and placement-puzzle agents.

pub mod diff;
pub mod error;
pub mod eval;
pub mod model;
pub mod puzzle;
pub mod rng;
pub mod sim;
pub mod store;

pub use error::{CwmError, Result};
