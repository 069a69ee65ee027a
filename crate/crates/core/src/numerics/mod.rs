//! Minimal differentiable tensor operations.
//!
//! Plain functions ([`conv2d`], [`linear_attention`], [`layer_norm`], ...)
//! operate on [`Tensor`] values directly. The same operations are available
//! on a [`Tape`], which records them for reverse-mode differentiation.

mod attention;
pub mod container;
mod conv;
mod encoding;
mod gradcheck;
mod linalg;
mod norm;
mod ops;
mod real;
mod suite;
mod tape;
mod tensor;

pub use attention::{linear_attention, reference_attention};
pub use conv::{conv2d, conv_output_len, ConvGeometry};
pub use encoding::{positional_encoding, POSITIONAL_BASE};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_FLOOR};
pub use norm::{layer_norm, spatial_softmax, LAYER_NORM_EPS};
pub use real::{DType, Real};
pub use suite::op_gradient_suite;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
