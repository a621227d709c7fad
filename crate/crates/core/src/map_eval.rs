//! Per-frame, subset and sliding-window mean average precision.
//!
//! Matching and interpolation follow the COCO box protocol without area ranges,
//! crowd regions or detection caps: detections of a category are ranked by
//! descending score and greedily matched to the unmatched ground truth with the
//! highest IoU at or above the threshold. AP is the mean interpolated precision
//! over evenly spaced recall levels.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{BoundingBox, Detection, FrameRecord, GroundTruthObject};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid mAP configuration: {0}")]
    InvalidConfig(String),

    #[error("window of {window} frames exceeds the {frames} available frames")]
    WindowTooLarge { window: usize, frames: usize },

    #[error("window length must be at least 1")]
    EmptyWindow,

    #[error("no frame in the subset has ground truth of a configured category")]
    NoEvaluableFrames,
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    let (lo, hi) = (0.5, 0.95);
    (0..10).map(|i| lo + (hi - lo) * i as f64 / 9.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: usize,
    pub categories: Vec<String>,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            iou_thresholds: coco_iou_thresholds(),
            recall_points: 101,
            categories: vec!["person".to_string(), "car".to_string()],
        }
    }
}

impl MapConfig {
    pub fn new(
        iou_thresholds: Vec<f64>,
        recall_points: usize,
        categories: Vec<String>,
    ) -> Result<Self, EvalError> {
        let cfg = MapConfig {
            iou_thresholds,
            recall_points,
            categories,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_categories<S: Into<String>>(categories: impl IntoIterator<Item = S>) -> Self {
        MapConfig {
            categories: categories.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::InvalidConfig("no IoU thresholds".into()));
        }
        if self
            .iou_thresholds
            .iter()
            .any(|t| !(t.is_finite() && *t > 0.0 && *t <= 1.0))
        {
            return Err(EvalError::InvalidConfig(
                "IoU thresholds must lie in (0, 1]".into(),
            ));
        }
        if self.iou_thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EvalError::InvalidConfig(
                "IoU thresholds must be strictly increasing".into(),
            ));
        }
        if self.recall_points < 2 {
            return Err(EvalError::InvalidConfig(
                "at least two recall points are required".into(),
            ));
        }
        if self.categories.is_empty() {
            return Err(EvalError::InvalidConfig("no categories configured".into()));
        }
        Ok(())
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Outcome of matching one category's detections at one IoU threshold.
///
/// All per-detection vectors are in ranked (descending score) order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Index of each ranked detection in the input slice.
    pub detection_index: Vec<usize>,
    pub scores: Vec<f64>,
    pub true_positive: Vec<bool>,
    /// For each ground truth of the category (input order), the matched input detection index.
    pub gt_matched_by: Vec<Option<usize>>,
}

impl MatchResult {
    pub fn n_gt(&self) -> usize {
        self.gt_matched_by.len()
    }

    pub fn tp_count(&self) -> usize {
        self.true_positive.iter().filter(|t| **t).count()
    }

    pub fn fp_count(&self) -> usize {
        self.true_positive.len() - self.tp_count()
    }

    pub fn unmatched_gt(&self) -> usize {
        self.gt_matched_by.iter().filter(|m| m.is_none()).count()
    }
}

pub fn match_detections(
    gt: &[GroundTruthObject],
    det: &[Detection],
    category: &str,
    iou_threshold: f64,
) -> MatchResult {
    let gt_boxes: Vec<&BoundingBox> = gt
        .iter()
        .filter(|g| g.category == category)
        .map(|g| &g.bbox)
        .collect();

    let mut order: Vec<usize> = det
        .iter()
        .enumerate()
        .filter(|(_, d)| d.category == category)
        .map(|(i, _)| i)
        .collect();
    // stable: equal scores keep input order
    order.sort_by(|&a, &b| det[b].score.total_cmp(&det[a].score));

    let mut gt_matched_by = vec![None; gt_boxes.len()];
    let mut true_positive = Vec::with_capacity(order.len());
    for &di in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gb) in gt_boxes.iter().enumerate() {
            if gt_matched_by[gi].is_some() {
                continue;
            }
            let v = iou(&det[di].bbox, gb);
            if v < iou_threshold {
                continue;
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_matched_by[gi] = Some(di);
                true_positive.push(true);
            }
            None => true_positive.push(false),
        }
    }

    MatchResult {
        scores: order.iter().map(|&i| det[i].score).collect(),
        detection_index: order,
        true_positive,
        gt_matched_by,
    }
}

/// Interpolated AP of a ranked TP/FP sequence against `n_gt` ground truths.
///
/// Precision is made monotone from the right, then sampled at `recall_points`
/// evenly spaced recall levels in [0, 1]; levels never reached count as zero.
pub fn average_precision(ranked_tp: &[bool], n_gt: usize, recall_points: usize) -> f64 {
    debug_assert!(n_gt > 0 && recall_points >= 2);
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in ranked_tp {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }

    let steps = (recall_points - 1) as f64;
    let mut sum = 0.0;
    for j in 0..recall_points {
        let level = j as f64 / steps;
        let idx = recall.partition_point(|&r| r < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / recall_points as f64
}

/// AP for one category at one threshold; `None` when the frame has no ground truth of it.
pub fn per_frame_ap(
    frame: &FrameRecord,
    category: &str,
    iou_threshold: f64,
    recall_points: usize,
) -> Option<f64> {
    let m = match_detections(
        &frame.ground_truth,
        &frame.detections,
        category,
        iou_threshold,
    );
    if m.n_gt() == 0 {
        return None;
    }
    Some(average_precision(&m.true_positive, m.n_gt(), recall_points))
}

/// Mean AP over the (category, threshold) grid restricted to categories present in the frame.
pub fn per_frame_map(frame: &FrameRecord, cfg: &MapConfig) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for category in &cfg.categories {
        if !frame.ground_truth.iter().any(|g| &g.category == category) {
            continue;
        }
        for &t in &cfg.iou_thresholds {
            if let Some(ap) = per_frame_ap(frame, category, t, cfg.recall_points) {
                sum += ap;
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Per-frame mAP for every frame, evaluated in parallel; output order follows input order.
pub fn per_frame_maps(frames: &[FrameRecord], cfg: &MapConfig) -> Vec<Option<f64>> {
    frames.par_iter().map(|f| per_frame_map(f, cfg)).collect()
}

/// Ranked `(score, is_tp)` pairs per IoU threshold.
type RankedByThreshold = Vec<Vec<(f64, bool)>>;

/// Matches of one frame, kept per (category, threshold) so windows can be pooled cheaply.
#[derive(Debug, Clone)]
struct FrameMatches {
    /// `[category] -> (n_gt, [threshold] -> ranked (score, tp))`
    per_category: Vec<(usize, RankedByThreshold)>,
}

impl FrameMatches {
    fn compute(frame: &FrameRecord, cfg: &MapConfig) -> Self {
        let per_category = cfg
            .categories
            .iter()
            .map(|category| {
                let n_gt = frame
                    .ground_truth
                    .iter()
                    .filter(|g| &g.category == category)
                    .count();
                let per_threshold = cfg
                    .iou_thresholds
                    .iter()
                    .map(|&t| {
                        let m =
                            match_detections(&frame.ground_truth, &frame.detections, category, t);
                        m.scores.into_iter().zip(m.true_positive).collect()
                    })
                    .collect();
                (n_gt, per_threshold)
            })
            .collect();
        FrameMatches { per_category }
    }
}

/// Dataset-style mAP over a group of frames: matches stay within a frame, then all
/// ranked detections of a category are merged (stable by frame order) into one PR curve.
fn pooled_map_of(matches: &[&FrameMatches], cfg: &MapConfig) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (ci, _) in cfg.categories.iter().enumerate() {
        let n_gt: usize = matches.iter().map(|m| m.per_category[ci].0).sum();
        if n_gt == 0 {
            continue;
        }
        for ti in 0..cfg.iou_thresholds.len() {
            let mut ranked: Vec<(f64, bool)> = matches
                .iter()
                .flat_map(|m| m.per_category[ci].1[ti].iter().copied())
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            let tp: Vec<bool> = ranked.into_iter().map(|(_, hit)| hit).collect();
            sum += average_precision(&tp, n_gt, cfg.recall_points);
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Pooled mAP over all given frames; `None` when no configured category has ground truth.
pub fn pooled_map<'a>(
    frames: impl IntoIterator<Item = &'a FrameRecord>,
    cfg: &MapConfig,
) -> Option<f64> {
    let matches: Vec<FrameMatches> = frames
        .into_iter()
        .map(|f| FrameMatches::compute(f, cfg))
        .collect();
    let refs: Vec<&FrameMatches> = matches.iter().collect();
    pooled_map_of(&refs, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowMode {
    /// Pool every frame of the window into one evaluation.
    #[default]
    Pooled,
    /// Average the defined per-frame mAPs inside the window.
    MeanPerFrame,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMap {
    pub end_index: usize,
    pub map: Option<f64>,
}

pub fn sliding_window_map(
    frames: &[FrameRecord],
    window: usize,
    cfg: &MapConfig,
    mode: WindowMode,
) -> Result<Vec<WindowMap>, EvalError> {
    if window == 0 {
        return Err(EvalError::EmptyWindow);
    }
    if window > frames.len() {
        return Err(EvalError::WindowTooLarge {
            window,
            frames: frames.len(),
        });
    }
    let out = match mode {
        WindowMode::Pooled => {
            let matches: Vec<FrameMatches> = frames
                .par_iter()
                .map(|f| FrameMatches::compute(f, cfg))
                .collect();
            (window - 1..frames.len())
                .into_par_iter()
                .map(|end| {
                    let refs: Vec<&FrameMatches> = matches[end + 1 - window..=end].iter().collect();
                    WindowMap {
                        end_index: end,
                        map: pooled_map_of(&refs, cfg),
                    }
                })
                .collect()
        }
        WindowMode::MeanPerFrame => {
            let maps = per_frame_maps(frames, cfg);
            (window - 1..frames.len())
                .map(|end| {
                    let defined: Vec<f64> = maps[end + 1 - window..=end]
                        .iter()
                        .flatten()
                        .copied()
                        .collect();
                    WindowMap {
                        end_index: end,
                        map: (!defined.is_empty())
                            .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                    }
                })
                .collect()
        }
    };
    Ok(out)
}

/// Mean of the defined per-frame mAPs of a subset.
pub fn subset_map<'a>(
    frames: impl IntoIterator<Item = &'a FrameRecord>,
    cfg: &MapConfig,
) -> Result<f64, EvalError> {
    let defined: Vec<f64> = frames
        .into_iter()
        .filter_map(|f| per_frame_map(f, cfg))
        .collect();
    if defined.is_empty() {
        return Err(EvalError::NoEvaluableFrames);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Dataset-level pooled mAP of a subset.
pub fn subset_map_pooled<'a>(
    frames: impl IntoIterator<Item = &'a FrameRecord>,
    cfg: &MapConfig,
) -> Result<f64, EvalError> {
    pooled_map(frames, cfg).ok_or(EvalError::NoEvaluableFrames)
}
