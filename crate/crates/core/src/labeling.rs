//! Failure/success labels from per-frame mAP against a critical threshold.

use thiserror::Error;

use crate::model::{AlertLabel, Label};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("no values to label")]
    EmptyInput,

    #[error("percentile {0} outside (0, 100)")]
    InvalidPercentile(f64),

    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),

    #[error("per-frame mAP {value} of frame {frame_id} outside [0, 1]")]
    InvalidMap { frame_id: String, value: f64 },
}

pub const DEFAULT_PERCENTILE: f64 = 25.0;
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelingConfig {
    /// λ is the k-th (nearest-rank) percentile of the observed mAPs.
    Percentile(f64),
    /// λ is a fixed critical mAP.
    Absolute(f64),
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig::Percentile(DEFAULT_PERCENTILE)
    }
}

/// Nearest-rank percentile: the ⌈k·n/100⌉-th smallest value (1-based, clamped to [1, n]).
pub fn percentile(values: &[f64], k: f64) -> Result<f64, LabelError> {
    if values.is_empty() {
        return Err(LabelError::EmptyInput);
    }
    if !(k > 0.0 && k < 100.0) {
        return Err(LabelError::InvalidPercentile(k));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let exact = k * n as f64 / 100.0;
    // absorb representation error so that e.g. 20% of 10 is rank 2, not 3
    let rank = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    };
    let rank = (rank as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// Labels each frame failure iff its mAP is strictly below the resolved λ.
pub fn assign_labels(
    maps: &[(String, f64)],
    cfg: LabelingConfig,
) -> Result<(f64, Vec<AlertLabel>), LabelError> {
    if maps.is_empty() {
        return Err(LabelError::EmptyInput);
    }
    if let Some((frame_id, value)) = maps
        .iter()
        .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(v)))
    {
        return Err(LabelError::InvalidMap {
            frame_id: frame_id.clone(),
            value: *value,
        });
    }
    let lambda = match cfg {
        LabelingConfig::Percentile(k) => {
            let values: Vec<f64> = maps.iter().map(|(_, v)| *v).collect();
            percentile(&values, k)?
        }
        LabelingConfig::Absolute(v) => {
            if !(0.0..=1.0).contains(&v) {
                return Err(LabelError::InvalidThreshold(v));
            }
            v
        }
    };
    Ok((lambda, apply_threshold(maps, lambda)))
}

/// Applies an already-resolved λ, e.g. one computed on a training split.
pub fn apply_threshold(maps: &[(String, f64)], lambda: f64) -> Vec<AlertLabel> {
    maps.iter()
        .map(|(frame_id, m)| AlertLabel {
            frame_id: frame_id.clone(),
            per_frame_map: *m,
            label: if *m < lambda {
                Label::Failure
            } else {
                Label::Success
            },
        })
        .collect()
}
