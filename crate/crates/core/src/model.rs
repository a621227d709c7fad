//! Shared domain types: boxes, detections, frames, activation maps, features and labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(
        "invalid box [{x1}, {y1}, {x2}, {y2}]: corners must be finite with x2 > x1 and y2 > y1"
    )]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("invalid score {0}: must be within [0, 1]")]
    InvalidScore(f64),

    #[error("empty category label")]
    EmptyCategory,

    #[error("activation map {frame_id}/{layer}: {reason}")]
    InvalidActivation {
        frame_id: String,
        layer: String,
        reason: String,
    },

    #[error("feature vector for frame {0} contains non-finite values")]
    NonFiniteFeature(String),

    #[error("unknown feature name '{0}'")]
    UnknownFeature(String),
}

/// Axis-aligned box in continuous pixel coordinates, corner form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ModelError> {
        let b = BoundingBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(ModelError::InvalidBox {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub category: String,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, category: impl Into<String>, score: f64) -> Self {
        Detection {
            bbox,
            category: category.into(),
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub bbox: BoundingBox,
    pub category: String,
}

impl GroundTruthObject {
    pub fn new(bbox: BoundingBox, category: impl Into<String>) -> Self {
        GroundTruthObject {
            bbox,
            category: category.into(),
        }
    }
}

/// One frame's annotations and detector output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameRecord {
    pub frame_id: String,
    pub ground_truth: Vec<GroundTruthObject>,
    pub detections: Vec<Detection>,
}

impl FrameRecord {
    pub fn new(frame_id: impl Into<String>) -> Self {
        FrameRecord {
            frame_id: frame_id.into(),
            ..Default::default()
        }
    }

    pub fn with_gt(mut self, gt: GroundTruthObject) -> Self {
        self.ground_truth.push(gt);
        self
    }

    pub fn with_detection(mut self, det: Detection) -> Self {
        self.detections.push(det);
        self
    }
}

/// Checks every box, score and category of a frame.
pub fn validate_frame(record: FrameRecord) -> Result<FrameRecord, ModelError> {
    for gt in &record.ground_truth {
        gt.bbox.validate()?;
        if gt.category.is_empty() {
            return Err(ModelError::EmptyCategory);
        }
    }
    for det in &record.detections {
        det.bbox.validate()?;
        if !(0.0..=1.0).contains(&det.score) {
            return Err(ModelError::InvalidScore(det.score));
        }
        if det.category.is_empty() {
            return Err(ModelError::EmptyCategory);
        }
    }
    Ok(record)
}

/// Backbone activations for one frame and layer, stored channel-major (channel, row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    frame_id: String,
    layer_name: String,
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ActivationMap {
    pub fn new(
        frame_id: impl Into<String>,
        layer_name: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let frame_id = frame_id.into();
        let layer_name = layer_name.into();
        let fail = |reason: String| ModelError::InvalidActivation {
            frame_id: frame_id.clone(),
            layer: layer_name.clone(),
            reason,
        };
        if channels == 0 || height == 0 || width == 0 {
            return Err(fail(format!(
                "dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| fail("dimension product overflows".into()))?;
        if values.len() != expected {
            return Err(fail(format!(
                "expected {expected} values, found {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite value at index {pos}")));
        }
        Ok(ActivationMap {
            frame_id,
            layer_name,
            channels,
            height,
            width,
            values,
        })
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        let hw = self.spatial_len();
        &self.values[index * hw..(index + 1) * hw]
    }

    pub fn channel_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.spatial_len())
    }
}

/// Names of the feature families an alert can be trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    Mean,
    Max,
    Std,
    MeanStd,
    MeanMax,
    MeanMaxStd,
    Layer,
    MeanConfScore,
    NProposals,
    External,
}

impl FeatureName {
    pub const ALL: [FeatureName; 10] = [
        FeatureName::Mean,
        FeatureName::Max,
        FeatureName::Std,
        FeatureName::MeanStd,
        FeatureName::MeanMax,
        FeatureName::MeanMaxStd,
        FeatureName::Layer,
        FeatureName::MeanConfScore,
        FeatureName::NProposals,
        FeatureName::External,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureName::Mean => "mean",
            FeatureName::Max => "max",
            FeatureName::Std => "std",
            FeatureName::MeanStd => "mean_std",
            FeatureName::MeanMax => "mean_max",
            FeatureName::MeanMaxStd => "mean_max_std",
            FeatureName::Layer => "layer",
            FeatureName::MeanConfScore => "mean_conf_score",
            FeatureName::NProposals => "n_proposals",
            FeatureName::External => "external",
        }
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureName {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureName::ALL
            .iter()
            .copied()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| ModelError::UnknownFeature(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub frame_id: String,
    pub name: FeatureName,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(
        frame_id: impl Into<String>,
        name: FeatureName,
        values: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let frame_id = frame_id.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteFeature(frame_id));
        }
        Ok(FeatureVector {
            frame_id,
            name,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Failure,
    Success,
}

impl Label {
    pub fn is_failure(self) -> bool {
        self == Label::Failure
    }

    /// 1.0 for failure (the positive class), 0.0 for success.
    pub fn as_target(self) -> f64 {
        if self.is_failure() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertLabel {
    pub frame_id: String,
    pub per_frame_map: f64,
    pub label: Label,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox { x1, y1, x2, y2 }
    }

    #[test]
    fn frame_with_single_gt_is_valid() {
        let frame =
            FrameRecord::new("f0").with_gt(GroundTruthObject::new(bx(0.0, 0.0, 10.0, 10.0), "car"));
        assert!(validate_frame(frame).is_ok());
    }

    #[test]
    fn score_above_one_is_rejected() {
        let frame = FrameRecord::new("f0").with_detection(Detection::new(
            bx(0.0, 0.0, 10.0, 10.0),
            "car",
            1.5,
        ));
        assert_eq!(validate_frame(frame), Err(ModelError::InvalidScore(1.5)));
    }

    #[test]
    fn zero_width_box_is_rejected() {
        let frame =
            FrameRecord::new("f0").with_gt(GroundTruthObject::new(bx(3.0, 0.0, 3.0, 10.0), "car"));
        assert!(matches!(
            validate_frame(frame),
            Err(ModelError::InvalidBox { .. })
        ));
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 5.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn empty_category_is_rejected() {
        let frame =
            FrameRecord::new("f0").with_gt(GroundTruthObject::new(bx(0.0, 0.0, 1.0, 1.0), ""));
        assert_eq!(validate_frame(frame), Err(ModelError::EmptyCategory));
    }

    #[test]
    fn activation_map_checks_value_count() {
        assert!(ActivationMap::new("f", "l", 2, 2, 2, vec![0.0; 8]).is_ok());
        assert!(ActivationMap::new("f", "l", 2, 2, 2, vec![0.0; 7]).is_err());
        assert!(ActivationMap::new("f", "l", 0, 2, 2, vec![]).is_err());
        assert!(ActivationMap::new("f", "l", 1, 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn activation_channels_are_channel_major() {
        let m = ActivationMap::new("f", "l", 2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.channel(0), &[1.0, 2.0]);
        assert_eq!(m.channel(1), &[3.0, 4.0]);
        assert_eq!(m.channel_iter().count(), 2);
    }

    #[test]
    fn feature_names_parse_back() {
        for name in FeatureName::ALL {
            assert_eq!(name.as_str().parse::<FeatureName>().unwrap(), name);
        }
        assert!("bogus".parse::<FeatureName>().is_err());
    }
}
