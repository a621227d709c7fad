//! Alert input features: channel-wise pooling of backbone activations and
//! detection-derived statistics.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{ActivationMap, FeatureName, FeatureVector, FrameRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("feature parts belong to different frames: {expected} vs {found}")]
    FrameIdMismatch { expected: String, found: String },

    #[error("nothing to pool")]
    EmptyInput,

    #[error("score cutoff {0} outside [0, 1]")]
    InvalidCutoff(f64),

    #[error("unknown pooling kind '{0}'")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Mean,
    Max,
    Std,
    MeanStd,
    MeanMax,
    MeanMaxStd,
    Layer,
}

impl PoolKind {
    pub fn feature_name(self) -> FeatureName {
        match self {
            PoolKind::Mean => FeatureName::Mean,
            PoolKind::Max => FeatureName::Max,
            PoolKind::Std => FeatureName::Std,
            PoolKind::MeanStd => FeatureName::MeanStd,
            PoolKind::MeanMax => FeatureName::MeanMax,
            PoolKind::MeanMaxStd => FeatureName::MeanMaxStd,
            PoolKind::Layer => FeatureName::Layer,
        }
    }

    /// Output length for a final layer with `channels` channels (not meaningful for `Layer`).
    pub fn output_len(self, channels: usize) -> usize {
        match self {
            PoolKind::Mean | PoolKind::Max | PoolKind::Std | PoolKind::Layer => channels,
            PoolKind::MeanStd | PoolKind::MeanMax => 2 * channels,
            PoolKind::MeanMaxStd => 3 * channels,
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.feature_name().as_str())
    }
}

impl FromStr for PoolKind {
    type Err = PoolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "mean" => PoolKind::Mean,
            "max" => PoolKind::Max,
            "std" => PoolKind::Std,
            "mean_std" => PoolKind::MeanStd,
            "mean_max" => PoolKind::MeanMax,
            "mean_max_std" => PoolKind::MeanMaxStd,
            "layer" => PoolKind::Layer,
            other => return Err(PoolError::UnknownKind(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub score_cutoff: f64,
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec {
            kind: PoolKind::MeanMaxStd,
            score_cutoff: 0.5,
        }
    }
}

fn feature(a: &ActivationMap, name: FeatureName, values: Vec<f64>) -> FeatureVector {
    // activation maps only hold finite values, so reductions of them are finite too
    FeatureVector {
        frame_id: a.frame_id().to_string(),
        name,
        values,
    }
}

fn channel_mean(ch: &[f64]) -> f64 {
    ch.iter().sum::<f64>() / ch.len() as f64
}

fn channel_max(ch: &[f64]) -> f64 {
    ch.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn channel_std(ch: &[f64]) -> f64 {
    let first = ch[0];
    if ch.iter().all(|&v| v == first) {
        return 0.0;
    }
    let mean = channel_mean(ch);
    let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ch.len() as f64;
    var.sqrt()
}

/// Spatial average of every channel.
pub fn mean_pool(a: &ActivationMap) -> FeatureVector {
    feature(
        a,
        FeatureName::Mean,
        a.channel_iter().map(channel_mean).collect(),
    )
}

/// Spatial maximum of every channel.
pub fn max_pool(a: &ActivationMap) -> FeatureVector {
    feature(
        a,
        FeatureName::Max,
        a.channel_iter().map(channel_max).collect(),
    )
}

/// Population standard deviation of every channel.
pub fn std_pool(a: &ActivationMap) -> FeatureVector {
    feature(
        a,
        FeatureName::Std,
        a.channel_iter().map(channel_std).collect(),
    )
}

/// Concatenates parts of the same frame in order. The result keeps the name of a
/// single part, otherwise takes `name`.
pub fn concat_features(
    parts: &[FeatureVector],
    name: FeatureName,
) -> Result<FeatureVector, PoolError> {
    let first = parts.first().ok_or(PoolError::EmptyInput)?;
    if let Some(bad) = parts.iter().find(|p| p.frame_id != first.frame_id) {
        return Err(PoolError::FrameIdMismatch {
            expected: first.frame_id.clone(),
            found: bad.frame_id.clone(),
        });
    }
    if parts.len() == 1 {
        return Ok(first.clone());
    }
    Ok(FeatureVector {
        frame_id: first.frame_id.clone(),
        name,
        values: parts
            .iter()
            .flat_map(|p| p.values.iter().copied())
            .collect(),
    })
}

/// Mean-pools every layer and concatenates them in the given order.
pub fn layer_feature(maps: &[ActivationMap]) -> Result<FeatureVector, PoolError> {
    if maps.is_empty() {
        return Err(PoolError::EmptyInput);
    }
    let parts: Vec<FeatureVector> = maps.iter().map(mean_pool).collect();
    let mut out = concat_features(&parts, FeatureName::Layer)?;
    out.name = FeatureName::Layer;
    Ok(out)
}

/// Pools one map with a single-layer kind. `Layer` degenerates to mean pooling.
pub fn pool_map(kind: PoolKind, a: &ActivationMap) -> FeatureVector {
    let parts: Vec<FeatureVector> = match kind {
        PoolKind::Mean => return mean_pool(a),
        PoolKind::Max => return max_pool(a),
        PoolKind::Std => return std_pool(a),
        PoolKind::Layer => {
            let mut f = mean_pool(a);
            f.name = FeatureName::Layer;
            return f;
        }
        PoolKind::MeanStd => vec![mean_pool(a), std_pool(a)],
        PoolKind::MeanMax => vec![mean_pool(a), max_pool(a)],
        PoolKind::MeanMaxStd => vec![mean_pool(a), max_pool(a), std_pool(a)],
    };
    concat_features(&parts, kind.feature_name()).expect("parts share one map")
}

/// Extracts a feature from a frame's layers (ordered shallow to deep). Single-layer
/// kinds use the last, deepest layer.
pub fn extract(kind: PoolKind, maps: &[ActivationMap]) -> Result<FeatureVector, PoolError> {
    match kind {
        PoolKind::Layer => layer_feature(maps),
        _ => {
            let last = maps.last().ok_or(PoolError::EmptyInput)?;
            Ok(pool_map(kind, last))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionFeatures {
    pub mean_conf_score: f64,
    pub n_proposals: usize,
}

impl DetectionFeatures {
    pub fn into_vectors(self, frame_id: &str) -> [FeatureVector; 2] {
        [
            FeatureVector {
                frame_id: frame_id.to_string(),
                name: FeatureName::MeanConfScore,
                values: vec![self.mean_conf_score],
            },
            FeatureVector {
                frame_id: frame_id.to_string(),
                name: FeatureName::NProposals,
                values: vec![self.n_proposals as f64],
            },
        ]
    }
}

/// Count and mean score of detections scoring strictly above `cutoff`; the mean is 0 when none do.
pub fn detection_features(
    frame: &FrameRecord,
    cutoff: f64,
) -> Result<DetectionFeatures, PoolError> {
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(PoolError::InvalidCutoff(cutoff));
    }
    let kept: Vec<f64> = frame
        .detections
        .iter()
        .map(|d| d.score)
        .filter(|&s| s > cutoff)
        .collect();
    let mean_conf_score = if kept.is_empty() {
        0.0
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    Ok(DetectionFeatures {
        mean_conf_score,
        n_proposals: kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, Detection};

    fn two_by_two() -> ActivationMap {
        ActivationMap::new("f", "l4", 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn worked_two_by_two() {
        let a = two_by_two();
        assert_eq!(mean_pool(&a).values, vec![2.5]);
        assert_eq!(max_pool(&a).values, vec![4.0]);
        // variance ((1.5² + 0.5²) · 2) / 4 = 1.25
        assert!((std_pool(&a).values[0] - 1.25f64.sqrt()).abs() < 1e-12);
        let f = pool_map(PoolKind::MeanMaxStd, &a);
        assert_eq!(f.name, FeatureName::MeanMaxStd);
        assert_eq!(f.values.len(), 3);
        assert!((f.values[2] - 1.118_033_988_749_895).abs() < 1e-12);
    }

    #[test]
    fn constant_channels() {
        let a = ActivationMap::new("f", "l", 3, 2, 3, vec![0.1; 18]).unwrap();
        assert!(mean_pool(&a).values.iter().all(|v| (v - 0.1).abs() < 1e-12));
        assert_eq!(max_pool(&a).values, vec![0.1; 3]);
        assert_eq!(std_pool(&a).values, vec![0.0; 3]);
    }

    #[test]
    fn negative_channel_max_is_not_clamped() {
        let a = ActivationMap::new("f", "l", 1, 1, 3, vec![-3.0, -0.5, -2.0]).unwrap();
        assert_eq!(max_pool(&a).values, vec![-0.5]);
    }

    #[test]
    fn single_pixel_map_has_zero_spread() {
        let a = ActivationMap::new("f", "l", 4, 1, 1, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(std_pool(&a).values, vec![0.0; 4]);
    }

    #[test]
    fn output_lengths() {
        let a = ActivationMap::new("f", "l", 5, 2, 2, (0..20).map(f64::from).collect()).unwrap();
        for kind in [
            PoolKind::Mean,
            PoolKind::Max,
            PoolKind::Std,
            PoolKind::MeanStd,
            PoolKind::MeanMax,
            PoolKind::MeanMaxStd,
        ] {
            assert_eq!(pool_map(kind, &a).values.len(), kind.output_len(5));
        }
    }

    #[test]
    fn concat_rejects_mixed_frames() {
        let a = mean_pool(&two_by_two());
        let mut b = a.clone();
        b.frame_id = "other".into();
        assert!(matches!(
            concat_features(&[a.clone(), b], FeatureName::MeanMax),
            Err(PoolError::FrameIdMismatch { .. })
        ));
        assert_eq!(
            concat_features(std::slice::from_ref(&a), FeatureName::External).unwrap(),
            a
        );
        assert_eq!(
            concat_features(&[], FeatureName::Mean),
            Err(PoolError::EmptyInput)
        );
    }

    #[test]
    fn layer_feature_concatenates_means() {
        let l1 = ActivationMap::new("f", "l1", 2, 2, 2, vec![3.0; 8]).unwrap();
        let l2 = ActivationMap::new("f", "l2", 3, 1, 2, vec![7.0; 6]).unwrap();
        let f = layer_feature(&[l1.clone(), l2]).unwrap();
        assert_eq!(f.name, FeatureName::Layer);
        assert_eq!(f.values, vec![3.0, 3.0, 7.0, 7.0, 7.0]);
        assert_eq!(
            layer_feature(std::slice::from_ref(&l1)).unwrap().values,
            mean_pool(&l1).values
        );
        assert_eq!(layer_feature(&[]), Err(PoolError::EmptyInput));
        let other = ActivationMap::new("g", "l2", 1, 1, 1, vec![0.0]).unwrap();
        assert!(matches!(
            layer_feature(&[l1, other]),
            Err(PoolError::FrameIdMismatch { .. })
        ));
    }

    fn scored(scores: &[f64]) -> FrameRecord {
        let mut f = FrameRecord::new("f");
        for &s in scores {
            f.detections.push(Detection::new(
                BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                "car",
                s,
            ));
        }
        f
    }

    #[test]
    fn detection_feature_rule() {
        let d = detection_features(&scored(&[0.9, 0.6, 0.4]), 0.5).unwrap();
        assert!((d.mean_conf_score - 0.75).abs() < 1e-12);
        assert_eq!(d.n_proposals, 2);

        let d = detection_features(&scored(&[]), 0.5).unwrap();
        assert_eq!((d.mean_conf_score, d.n_proposals), (0.0, 0));

        let d = detection_features(&scored(&[0.5]), 0.5).unwrap();
        assert_eq!(d.n_proposals, 0);

        assert!(detection_features(&scored(&[]), 1.5).is_err());
    }

    #[test]
    fn kinds_parse() {
        for s in [
            "mean",
            "max",
            "std",
            "mean_std",
            "mean_max",
            "mean_max_std",
            "layer",
        ] {
            assert_eq!(s.parse::<PoolKind>().unwrap().to_string(), s);
        }
        assert!("detection".parse::<PoolKind>().is_err());
    }
}
