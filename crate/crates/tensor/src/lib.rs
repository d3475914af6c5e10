//! Minimal CPU tensor library with tape-based reverse-mode autodiff.
//!
//! Everything runs single-threaded in a fixed order, so results are
//! bit-reproducible for a given input and parameter set.

mod graph;
pub mod nn;
mod ops;
pub mod optim;
mod params;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::{broadcast_shape, conv2d_output_size, sigmoid, softplus};
pub use params::{Binder, ParamId, ParamSet};
pub use scalar::Scalar;
pub use tensor::{numel, strides, Tensor};
