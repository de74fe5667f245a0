//! Multi-stage long-tailed object detection at desk scale.
//!
//! The crate covers the whole workflow: a synthetic long-tailed benchmark
//! generator, dataset statistics and head/tail partitioning, the augmentation
//! recipe, a small anchor-free detector with hand-written backpropagation,
//! student-teacher pseudo-labeling, the staged training pipeline with
//! head-tail classifier fusion, and LVIS-style evaluation.
//!
//! Detector numerics are generic over [`Scalar`]; training runs in `f32`
//! and gradient checks in `f64`.

pub mod augment;
pub mod dataset;
pub mod detector;
pub mod synthgen;
pub mod error;
pub mod evaluation;
pub mod json;
pub mod pipeline;
pub mod plots;
pub mod rng;
pub mod scalar;
pub mod semi;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision detector parameters, used for training.
pub type DetectorParamsF32 = detector::DetectorParams<f32>;
/// Double-precision detector parameters, used for gradient checks.
pub type DetectorParamsF64 = detector::DetectorParams<f64>;
pub type CheckpointF32 = detector::Checkpoint<f32>;
