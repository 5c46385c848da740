//! Few-shot 2D gaze calibration through a learnable screen projection.
//!
//! A frozen 3D gaze predictor is adapted to on-screen points of regard from a
//! handful of labelled samples. The screen pose `(r, t)` and a small rotation
//! plus bias adapter are fitted jointly through a differentiable ray–plane
//! intersection. Horizontally flipped samples get dynamic pseudo-labels by
//! inverse projection, mirroring, and an SVD alignment back to the reference
//! frame. [`simulator`] builds synthetic scenes with known ground truth.

pub mod adapter;
pub mod cli;
pub mod alignment;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod projection;
pub mod pseudolabel;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};
