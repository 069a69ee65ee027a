//! Overlap estimation between image pairs.
//!
//! The crate is organised by subsystem:
//!
//! - [`numerics`]: tensors, reverse-mode differentiation, attention kernels.
//! - [`geometry`]: two-view geometry, ground-truth overlap boxes, box metrics
//!   and epipolar match evaluation.
//! - [`model`]: the overlap network (backbone, multi-scale extractor,
//!   self/cross-attention encoder, single-query decoder and heads).
//! - [`loss`]: the composite training objective.
//! - [`synth`]: synthetic crop pairs with exact targets and the toy trainer.
//! - [`pipeline`]: resize/pad, overlap inference, crop-and-align, warp-back
//!   and the file formats used by the command-line tool.

pub mod error;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synth;

pub use error::{OetrError, Result};
pub use numerics::{Real, Tape, Tensor, Var};
