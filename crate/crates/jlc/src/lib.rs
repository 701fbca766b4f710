//! Desk-scale learned image compression laboratory.
//!
//! Trains a small convolutional autoencoder codec end-to-end under a
//! rate-distortion objective, with four selectable distortion definitions:
//! the plain baseline and three JND-oriented perceptual losses (pixel-wise,
//! image-wise, feature-wise). Evaluation covers real entropy-coded
//! bitstreams, RD curves, BD-rate and the JND-level bitrate-saving metric.
//!
//! Start with the runnable programs in `examples/`; the `jlc` binary exposes
//! the same operations as subcommands.

pub mod cli;
pub mod codec;
pub mod data;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod tensor;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use tensor::Tensor;
