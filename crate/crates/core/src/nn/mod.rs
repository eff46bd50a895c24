//! Dense `f64` network kernel: layer ops, sequential networks, SGD and a
//! finite-difference gradient checker.

mod gradcheck;
mod network;
pub mod ops;
mod optim;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use network::{ForwardCache, LayerKind, LayerSpec, Network, ParamSet};
pub use ops::{
    conv2d_backward, conv2d_forward, linear_backward, linear_forward, maxpool2d, maxpool2d_backward, relu,
    relu_backward, softmax_cross_entropy, PoolIndices,
};
pub use optim::{sgd_step, TrainConfig};
