//! Depth-assisted, full-resolution single-image novel view synthesis.
//!
//! A convolutional network maps a center view, its relative depth map and a
//! target viewpoint offset to a dense flow field; a differentiable backward
//! bilinear warp of the center view by that flow produces the novel view.
//! The crate carries its own small reverse-mode autodiff engine, the network,
//! a synthetic layered light-field generator with analytic ground truth,
//! training, evaluation and shift-and-add refocusing.

// `!(x < y)` is deliberate throughout: NaN has to fail validation.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity,
    clippy::needless_range_loop
)]

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod formats;
pub mod lightfield;
pub mod model;
pub mod refocus;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod warp;

pub use autodiff::{Node, ParameterStore};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
