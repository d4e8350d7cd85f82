//! Reverse-mode differentiation over dense tensors, limited to the
//! operations the network and its data-fit loss need, plus Adam.

mod adam;
pub mod check;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, Var};
pub use params::{Bound, ParamId, ParamSet};
pub use tensor::Tensor;
