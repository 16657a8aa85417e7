//! Minimal reverse-mode autodiff: dense arrays, a flat op tape, layer
//! wrappers, Adam, and a finite-difference gradient checker.

pub mod array;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod store;

pub use array::{Array, Scalar};
pub use gradcheck::gradient_check;
pub use graph::{conv_out_len, Graph, NodeId};
pub use layers::{BatchNorm, Conv2d, ConvT2d, LayerNorm, Linear};
pub use optim::{clip_global_norm, Adam};
pub use store::{bias_uniform, kaiming_uniform, ParamStore};
