//! Probabilistic multi-horizon forecasting for panels of related time series.
//!
//! The crate follows an encoder/decoder layout: a stack of dilated causal
//! convolution residual blocks summarizes the history of a series into a
//! latent vector, a residual decoder merges that latent with known future
//! covariates, and an output head emits either quantile forecasts or the
//! parameters of a Gaussian predictive distribution.
//!
//! Everything is built on a small dense [`Tensor`] type with reverse-mode
//! gradients recorded on an explicit [`tape::Tape`]. All floating-point math
//! routes through `libm`, so identical seeds produce bit-identical results
//! across platforms. The crate is `no_std` (with `alloc`); file formats,
//! dataset ingestion and the command-line surface live in the companion
//! `deeptcn` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod calendar;
mod error;
pub mod gradcheck;
pub mod heads;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod panel;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{DeepTcn, ModelSpec};
pub use panel::{CovariateSchema, Granularity, SeriesPanel, TrainingWindow};
pub use rng::RngState;
pub use tensor::Tensor;
