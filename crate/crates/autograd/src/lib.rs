//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Built for small CPU training loops: a [`Graph`] tape per step, named
//! parameters in a [`ParamStore`], and an [`Adam`] optimizer whose state can be
//! persisted and restored bit-exactly.

pub mod check;
mod conv;
mod graph;
mod ops;
mod optim;
mod params;
mod tensor;

pub use conv::{conv_out_len, resize_bilinear, Conv2dGeometry};
pub use graph::{Gradients, Graph, Var};
pub use ops::{concat0, concat_cols};
pub use optim::{Adam, AdamConfig};
pub use params::ParamStore;
pub use tensor::Tensor;
