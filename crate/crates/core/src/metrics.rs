//! Evaluation of an alert: ranking quality (AUROC, AUPRC), true warning rate,
//! the risk-averse metric and the mAP-vs-declaration-rate curve.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_eval::{self, EvalError, MapConfig};
use crate::model::{FrameRecord, Label};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("both failure and success frames are required")]
    SingleClassInput,

    #[error("no positive (failure) frames")]
    NoPositives,

    #[error("no failure frames")]
    NoFailureFrames,

    #[error("no frames to evaluate")]
    EmptyInput,

    #[error("invalid declaration rate {0}: rates must lie in (0, 1] and ascend")]
    InvalidRate(f64),

    #[error("invalid point scheme: need correct > abstain > incorrect")]
    InvalidPoints,

    #[error("frame {0} has no record")]
    MissingRecord(String),

    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// An alert output paired with the frame's ground-truth outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFrame {
    pub frame_id: String,
    pub failure_score: f64,
    pub true_label: Label,
    pub per_frame_map: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamConfig {
    pub correct_points: f64,
    pub incorrect_points: f64,
    pub abstain_points: f64,
    pub warning_threshold: f64,
}

impl Default for RamConfig {
    fn default() -> Self {
        RamConfig {
            correct_points: 1.0,
            incorrect_points: -0.5,
            abstain_points: 0.0,
            warning_threshold: 0.5,
        }
    }
}

impl RamConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.correct_points > self.abstain_points && self.abstain_points > self.incorrect_points
        {
            Ok(())
        } else {
            Err(MetricError::InvalidPoints)
        }
    }

    pub fn warns(&self, score: f64) -> bool {
        score >= self.warning_threshold
    }
}

/// Frames sorted by descending score and cut into groups of equal score; yields
/// cumulative (positives, negatives) after each group.
fn cumulative_counts(frames: &[ScoredFrame]) -> Vec<(usize, usize)> {
    let mut order: Vec<&ScoredFrame> = frames.iter().collect();
    order.sort_by(|a, b| b.failure_score.total_cmp(&a.failure_score));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let score = order[i].failure_score;
        while i < order.len() && order[i].failure_score == score {
            if order[i].true_label.is_failure() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Trapezoidal area under the ROC curve with failure as the positive class.
pub fn roc_auc(frames: &[ScoredFrame]) -> Result<f64, MetricError> {
    let pos = frames.iter().filter(|f| f.true_label.is_failure()).count();
    let neg = frames.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClassInput);
    }
    let mut area = 0.0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (tp, fp) in cumulative_counts(frames) {
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(area / (pos as f64 * neg as f64))
}

/// Average precision: Σ (R_n − R_{n−1}) · P_n over descending-score operating points.
pub fn pr_auc(frames: &[ScoredFrame]) -> Result<f64, MetricError> {
    let pos = frames.iter().filter(|f| f.true_label.is_failure()).count();
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in cumulative_counts(frames) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Share of failure frames on which the alert warns.
pub fn true_warning_rate(frames: &[ScoredFrame], cfg: &RamConfig) -> Result<f64, MetricError> {
    let failures: Vec<&ScoredFrame> = frames
        .iter()
        .filter(|f| f.true_label.is_failure())
        .collect();
    if failures.is_empty() {
        return Err(MetricError::NoFailureFrames);
    }
    let flagged = failures
        .iter()
        .filter(|f| cfg.warns(f.failure_score))
        .count();
    Ok(flagged as f64 / failures.len() as f64)
}

/// Points per image. With `use_alert`, a warned frame abstains; otherwise success
/// frames earn the correct points and failure frames the incorrect points.
pub fn risk_averse_metric(
    frames: &[ScoredFrame],
    cfg: &RamConfig,
    use_alert: bool,
) -> Result<f64, MetricError> {
    if frames.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    cfg.validate()?;
    let total: f64 = frames
        .iter()
        .map(|f| {
            if use_alert && cfg.warns(f.failure_score) {
                cfg.abstain_points
            } else if f.true_label.is_failure() {
                cfg.incorrect_points
            } else {
                cfg.correct_points
            }
        })
        .sum();
    Ok(total / frames.len() as f64)
}

/// How the mAP of an operating subset is aggregated.
#[derive(Debug, Clone, Copy)]
pub enum DrAggregate<'a> {
    /// Mean of the frames' per-frame mAPs.
    MeanPerFrame,
    /// Dataset-level pooled mAP recomputed from the frame records.
    Pooled {
        records: &'a [FrameRecord],
        cfg: &'a MapConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrPoint {
    pub rate: f64,
    pub frames: usize,
    pub map: f64,
}

/// Sorts frames by ascending failure score (ties by frame id) and evaluates the
/// first ⌈rate·n⌉ frames at every declaration rate.
pub fn map_vs_declaration_rate(
    frames: &[ScoredFrame],
    rates: &[f64],
    aggregate: DrAggregate<'_>,
) -> Result<Vec<DrPoint>, MetricError> {
    if frames.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut prev = 0.0;
    for &r in rates {
        if !(r > 0.0 && r <= 1.0) || r < prev {
            return Err(MetricError::InvalidRate(r));
        }
        prev = r;
    }
    let mut order: Vec<&ScoredFrame> = frames.iter().collect();
    order.sort_by(|a, b| {
        a.failure_score
            .total_cmp(&b.failure_score)
            .then_with(|| a.frame_id.cmp(&b.frame_id))
    });

    let lookup: HashMap<&str, &FrameRecord> = match aggregate {
        DrAggregate::Pooled { records, .. } => {
            records.iter().map(|r| (r.frame_id.as_str(), r)).collect()
        }
        DrAggregate::MeanPerFrame => HashMap::new(),
    };

    let n = order.len();
    rates
        .iter()
        .map(|&rate| {
            let exact = rate * n as f64;
            let count = if (exact - exact.round()).abs() < 1e-9 {
                exact.round()
            } else {
                exact.ceil()
            };
            let count = (count as usize).clamp(1, n);
            let subset = &order[..count];
            let map = match aggregate {
                DrAggregate::MeanPerFrame => {
                    subset.iter().map(|f| f.per_frame_map).sum::<f64>() / count as f64
                }
                DrAggregate::Pooled { cfg, .. } => {
                    let records = subset
                        .iter()
                        .map(|f| {
                            lookup
                                .get(f.frame_id.as_str())
                                .copied()
                                .ok_or_else(|| MetricError::MissingRecord(f.frame_id.clone()))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    map_eval::subset_map_pooled(records, cfg)?
                }
            };
            Ok(DrPoint {
                rate,
                frames: count,
                map,
            })
        })
        .collect()
}

/// Default declaration rates of the curve.
pub const DEFAULT_RATES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Summary of an alert's performance on a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub failures: usize,
    pub auprc: Option<f64>,
    pub auroc: Option<f64>,
    pub true_warning_rate: Option<f64>,
    pub ram_without_alert: f64,
    pub ram_with_alert: f64,
    pub warning_threshold: f64,
    pub dr_curve: Vec<DrPoint>,
}

impl EvalReport {
    /// Metrics that are undefined for the input (e.g. AUROC with a single class) are `None`.
    pub fn compute(
        frames: &[ScoredFrame],
        ram: &RamConfig,
        rates: &[f64],
        aggregate: DrAggregate<'_>,
    ) -> Result<Self, MetricError> {
        let optional = |r: Result<f64, MetricError>| match r {
            Ok(v) => Ok(Some(v)),
            Err(
                MetricError::SingleClassInput
                | MetricError::NoPositives
                | MetricError::NoFailureFrames,
            ) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(EvalReport {
            frames: frames.len(),
            failures: frames.iter().filter(|f| f.true_label.is_failure()).count(),
            auprc: optional(pr_auc(frames))?,
            auroc: optional(roc_auc(frames))?,
            true_warning_rate: optional(true_warning_rate(frames, ram))?,
            ram_without_alert: risk_averse_metric(frames, ram, false)?,
            ram_with_alert: risk_averse_metric(frames, ram, true)?,
            warning_threshold: ram.warning_threshold,
            dr_curve: map_vs_declaration_rate(frames, rates, aggregate)?,
        })
    }

    /// `rate,frames,map` table of the declaration-rate curve.
    pub fn dr_curve_csv(&self) -> String {
        let mut out = String::from("rate,frames,map\n");
        for p in &self.dr_curve {
            out.push_str(&format!("{},{},{}\n", p.rate, p.frames, p.map));
        }
        out
    }
}
