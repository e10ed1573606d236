//! Sleep spindle detection with a compact 1D U-Net.
//!
//! The crate covers the whole pipeline:
//!
//! * [`dsp`] band-pass filtering, resampling and z-scoring of EEG segments,
//! * [`nn`] a small dense-tensor core with forward and backward passes for
//!   the layers the network needs, plus finite-difference gradient checks,
//! * [`model`] the U-Net itself, its initialization and checkpoints,
//! * [`postproc`] conversion of per-sample probabilities into events,
//! * [`metrics`] by-event matching, F1 curves and by-subject statistics,
//! * [`train`] dice loss, Adam, folds, early stopping and test-split selection,
//! * [`synth`] a synthetic EEG generator with ground-truth spindles,
//! * [`dataset`] the on-disk dataset and annotation formats.
//!
//! Numerical code is generic over [`Scalar`]; the aliases below fix the two
//! precisions used in practice.

pub mod dataset;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod postproc;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use metrics::SpindleEvent;
pub use scalar::Scalar;

/// Training and inference precision.
pub type Tensor32 = nn::Tensor<f32>;
/// Gradient-check precision.
pub type Tensor64 = nn::Tensor<f64>;
pub type Model32 = model::ModelParams<f32>;
pub type Model64 = model::ModelParams<f64>;
