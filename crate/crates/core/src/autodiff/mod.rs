//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

pub mod gradcheck;
mod node;
pub mod ops;
mod params;

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport, ParamCheck};
pub use node::{BackwardOp, Node};
pub use params::{zero_grad, ParameterStore};
