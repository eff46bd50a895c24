//! Copy-move and object-removal forgery corpora, and domain-adversarial
//! training with a gradient-reversal layer, on a small dense `f64` network
//! kernel with hand-written backpropagation.

#![allow(clippy::needless_range_loop)]

pub mod check;
pub mod cli;
pub mod dann;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use tensor::Tensor;
