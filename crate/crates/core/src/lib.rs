//! Differential attention fusion Transformer for multivariate time-series
//! forecasting, built on a small reverse-mode autodiff engine.
//!
//! Module map:
//! - [`tensor`], [`autodiff`]: dense 2-D arrays and the differentiable tape.
//! - [`layers`]: positional encoding, differential split, neighbor attention,
//!   sliding fusion, conv+LSTM residual block, classical Transformer blocks.
//! - [`model`]: the full encoder/decoder forecaster with ablation switches.
//! - [`train`]: MSE training with Adam, learning-rate decay and checkpoints.
//! - [`data`]: CSV ingestion, normalization, windowing, overlap-cover
//!   assembly, metrics, synthetic series and the persistence baseline.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::Tensor;
