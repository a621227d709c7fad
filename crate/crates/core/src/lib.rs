//! Failure prediction for object detectors.
//!
//! Per-frame and windowed mAP evaluation, failure labeling, activation pooling,
//! a small MLP alert classifier, evaluation metrics, a synthetic stream generator
//! and the file formats that connect them.

pub mod alert;

pub mod cli;
pub mod formats;
pub mod labeling;
pub mod map_eval;
pub mod metrics;
pub mod model;
pub mod pool;
pub mod synth;
