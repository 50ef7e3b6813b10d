//! Empty container mass estimation from a single fixed RGB-D view.
//!
//! The pipeline reads per-frame container detections, keeps the `K`
//! detections nearest to the camera (by average depth under the mask),
//! regresses a mass for each patch with a small CNN that also sees the
//! patch's relative width, height and distance, and averages the `K`
//! predictions.
//!
//! Modules:
//! - [`data`]: recordings, detections, normalization statistics.
//! - [`selection`]: mask distances and K-nearest candidate selection.
//! - [`patch`]: crop/pad/resize and augmentation.
//! - [`nn`]: layer kernels and the optimizer.
//! - [`massnet`]: the regressor, training, model files, prediction.
//! - [`eval`]: relative error, score, per-class reports, folds and splits.
//! - [`synth`]: synthetic recordings with a known mass law.
//! - [`pipeline`]: extraction and prediction over recording directories.
//! - [`gradcheck`]: finite-difference verification of every backward pass.

mod binio;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod massnet;
pub mod nn;
pub mod patch;
pub mod pipeline;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
