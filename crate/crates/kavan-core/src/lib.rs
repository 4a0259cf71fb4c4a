//! Keypoint-attended visual attention network for GIF emotion recognition.
//!
//! The crate is organized around a small reverse-mode tensor engine
//! ([`tensor`]) on which the model modules are built:
//!
//! - [`heatmap`] — facial-keypoint Gaussians rendered into 7×7 supervision
//!   heatmaps,
//! - [`attention`] — keypoint-supervised spatial soft attention over visual
//!   feature blocks,
//! - [`recurrent`] — the LSTM cell and the hierarchical segment LSTM,
//! - [`losses`] — regression, classification, ranking, and keypoint
//!   supervision objectives,
//! - [`data`] — dataset types, segment frame sampling, the emotion taxonomy,
//!   a synthetic planted-face generator, and a toy patch encoder,
//! - [`model`] / [`train`] — parameter containers, the end-to-end forward
//!   pass, optimizers, training/evaluation loops, and gradient checking.

pub mod attention;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heatmap;
pub mod losses;
pub mod model;
pub mod recurrent;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Array, Tape, Tensor};
