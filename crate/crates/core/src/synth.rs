//! Deterministic synthetic detector streams.
//!
//! A scalar degradation condition `c_t ∈ [0, 1]` follows a reflected random walk.
//! It drives missed detections, localisation noise, score decay and false positives,
//! and it shifts the statistics of simulated backbone activations, so both the
//! per-frame mAP and the pooled features depend on it.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use thiserror::Error;

use crate::model::{
    ActivationMap, AlertLabel, BoundingBox, Detection, FrameRecord, GroundTruthObject,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
}

/// Which way the miss probability responds to the condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissModel {
    /// miss probability `c · q_miss`
    #[default]
    Condition,
    /// miss probability `(1 − c) · q_miss`
    InverseCondition,
}

/// Forces the condition to `value` for frames in `start..end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionOverride {
    pub start: usize,
    pub end: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub seed: u64,
    pub categories: Vec<String>,
    /// (width, height) in pixels.
    pub image_size: (f64, f64),
    pub max_gt_per_frame: usize,
    pub walk_step: f64,
    pub miss_gain: f64,
    pub fp_rate: f64,
    pub loc_noise_gain: f64,
    pub channels: usize,
    /// (height, width) of the activation map.
    pub map_size: (usize, usize),
    /// Starting condition; drawn uniformly from the seed when unset.
    pub initial_condition: Option<f64>,
    pub condition_overrides: Vec<ConditionOverride>,
    pub miss_model: MissModel,
    pub layer_name: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_frames: 1000,
            seed: 0,
            categories: vec!["person".to_string(), "car".to_string()],
            image_size: (1242.0, 375.0),
            max_gt_per_frame: 6,
            walk_step: 0.05,
            miss_gain: 0.8,
            fp_rate: 2.0,
            loc_noise_gain: 8.0,
            channels: 64,
            map_size: (12, 40),
            initial_condition: None,
            condition_overrides: Vec::new(),
            miss_model: MissModel::Condition,
            layer_name: "backbone.final".to_string(),
        }
    }
}

const MIN_SIDE: f64 = 40.0;
const MAX_SIDE: f64 = 200.0;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.categories.is_empty() || self.categories.iter().any(String::is_empty) {
            return bad("categories must be non-empty labels");
        }
        let (w, h) = self.image_size;
        if !(w.is_finite() && h.is_finite() && w >= 2.0 && h >= 2.0) {
            return bad("image size must be finite and at least 2x2 pixels");
        }
        if !(self.walk_step.is_finite() && (0.0..=1.0).contains(&self.walk_step)) {
            return bad("walk_step must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.miss_gain) {
            return bad("miss_gain must lie in [0, 1]");
        }
        if !(self.fp_rate.is_finite() && self.fp_rate >= 0.0) {
            return bad("fp_rate must be finite and >= 0");
        }
        if !(self.loc_noise_gain.is_finite() && self.loc_noise_gain >= 0.0) {
            return bad("loc_noise_gain must be finite and >= 0");
        }
        if self.channels == 0 || self.map_size.0 == 0 || self.map_size.1 == 0 {
            return bad("activation dimensions must be positive");
        }
        if let Some(c) = self.initial_condition {
            if !(0.0..=1.0).contains(&c) {
                return bad("initial_condition must lie in [0, 1]");
            }
        }
        for o in &self.condition_overrides {
            if !(0.0..=1.0).contains(&o.value) || o.start > o.end {
                return bad("condition overrides need start <= end and value in [0, 1]");
            }
        }
        Ok(())
    }

    /// Frame identifiers sort in temporal order.
    pub fn frame_id(index: usize) -> String {
        format!("frame_{index:06}")
    }
}

/// Latent per-channel constants of the simulated backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Mean under clean conditions.
    pub clean_mean: f64,
    /// Mean under full degradation.
    pub degraded_mean: f64,
    /// Base spread; scaled by `1 + c`.
    pub spread: f64,
}

pub fn channel_params(cfg: &SynthConfig) -> Vec<ChannelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    (0..cfg.channels)
        .map(|_| ChannelParams {
            clean_mean: rng.random_range(0.0..1.0),
            degraded_mean: rng.random_range(0.0..1.0),
            spread: rng.random_range(0.1..0.5),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub record: FrameRecord,
    pub activation: ActivationMap,
    pub condition: f64,
    pub n_missed: usize,
    pub n_false_positives: usize,
}

/// Lazily generated stream; yields frames in temporal order.
pub struct SynthStream {
    cfg: SynthConfig,
    params: Vec<ChannelParams>,
    scene_rng: ChaCha8Rng,
    activation_rng: ChaCha8Rng,
    walk: f64,
    index: usize,
}

impl SynthStream {
    pub fn new(cfg: SynthConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        let params = channel_params(&cfg);
        let mut scene_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut activation_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        activation_rng.set_stream(1);
        let walk = match cfg.initial_condition {
            Some(c) => c,
            None => scene_rng.random_range(0.0..=1.0),
        };
        Ok(SynthStream {
            cfg,
            params,
            scene_rng,
            activation_rng,
            walk,
            index: 0,
        })
    }

    pub fn channel_params(&self) -> &[ChannelParams] {
        &self.params
    }

    fn step_walk(&mut self) {
        if self.cfg.walk_step > 0.0 {
            let s = self.cfg.walk_step;
            let mut c = self.walk + self.scene_rng.random_range(-s..=s);
            while !(0.0..=1.0).contains(&c) {
                if c < 0.0 {
                    c = -c;
                }
                if c > 1.0 {
                    c = 2.0 - c;
                }
            }
            self.walk = c;
        }
    }

    fn random_box(&mut self) -> BoundingBox {
        let (iw, ih) = self.cfg.image_size;
        let rng = &mut self.scene_rng;
        let side = |rng: &mut ChaCha8Rng, limit: f64| {
            let hi = MAX_SIDE.min(limit);
            let lo = MIN_SIDE.min(hi);
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                hi
            }
        };
        let w = side(rng, iw);
        let h = side(rng, ih);
        let x1 = if iw > w {
            rng.random_range(0.0..=iw - w)
        } else {
            0.0
        };
        let y1 = if ih > h {
            rng.random_range(0.0..=ih - h)
        } else {
            0.0
        };
        BoundingBox {
            x1,
            y1,
            x2: x1 + w,
            y2: y1 + h,
        }
    }

    fn random_category(&mut self) -> String {
        let i = self.scene_rng.random_range(0..self.cfg.categories.len());
        self.cfg.categories[i].clone()
    }

    fn condition_at(&self, index: usize) -> f64 {
        self.cfg
            .condition_overrides
            .iter()
            .rev()
            .find(|o| (o.start..o.end).contains(&index))
            .map_or(self.walk, |o| o.value)
    }

    fn next_frame(&mut self) -> SynthFrame {
        let index = self.index;
        if index > 0 {
            self.step_walk();
        }
        self.index += 1;
        let c = self.condition_at(index);
        let frame_id = SynthConfig::frame_id(index);
        let mut record = FrameRecord::new(frame_id.clone());

        let n_gt = if self.cfg.max_gt_per_frame == 0 {
            0
        } else {
            self.scene_rng.random_range(1..=self.cfg.max_gt_per_frame)
        };
        let miss_p = match self.cfg.miss_model {
            MissModel::Condition => c * self.cfg.miss_gain,
            MissModel::InverseCondition => (1.0 - c) * self.cfg.miss_gain,
        };
        let noise = c * self.cfg.loc_noise_gain;
        let mut n_missed = 0;
        for _ in 0..n_gt {
            let bbox = self.random_box();
            let category = self.random_category();
            let missed = self.scene_rng.random::<f64>() < miss_p;
            let jitter: [f64; 4] = std::array::from_fn(|_| {
                let z: f64 = self.scene_rng.sample(StandardNormal);
                z * noise
            });
            let score = 1.0 - c * self.scene_rng.random_range(0.0..=0.5);
            if missed {
                n_missed += 1;
            } else {
                let x1 = bbox.x1 + jitter[0];
                let y1 = bbox.y1 + jitter[1];
                let x2 = (bbox.x2 + jitter[2]).max(x1 + 1.0);
                let y2 = (bbox.y2 + jitter[3]).max(y1 + 1.0);
                record.detections.push(Detection::new(
                    BoundingBox { x1, y1, x2, y2 },
                    category.clone(),
                    score,
                ));
            }
            record
                .ground_truth
                .push(GroundTruthObject::new(bbox, category));
        }

        let fp_mean = c * self.cfg.fp_rate;
        let n_fp = if fp_mean > 0.0 {
            let poisson = Poisson::new(fp_mean).expect("positive finite rate");
            poisson.sample(&mut self.scene_rng) as usize
        } else {
            0
        };
        for _ in 0..n_fp {
            let bbox = self.random_box();
            let category = self.random_category();
            let score = self.scene_rng.random::<f64>();
            record
                .detections
                .push(Detection::new(bbox, category, score));
        }

        let (h, w) = self.cfg.map_size;
        let hw = h * w;
        let mut values = Vec::with_capacity(self.params.len() * hw);
        for p in &self.params {
            let mean = p.clean_mean * (1.0 - c) + p.degraded_mean * c;
            let spread = p.spread * (1.0 + c);
            for _ in 0..hw {
                let z: f64 = self.activation_rng.sample(StandardNormal);
                // stored as binary32 so the tensor file round-trips exactly
                values.push((mean + spread * z) as f32 as f64);
            }
        }
        let activation = ActivationMap::new(
            frame_id,
            self.cfg.layer_name.clone(),
            self.params.len(),
            h,
            w,
            values,
        )
        .expect("generated activations are well formed");

        SynthFrame {
            record,
            activation,
            condition: c,
            n_missed,
            n_false_positives: n_fp,
        }
    }
}

impl Iterator for SynthStream {
    type Item = SynthFrame;

    fn next(&mut self) -> Option<SynthFrame> {
        (self.index < self.cfg.n_frames).then(|| self.next_frame())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.cfg.n_frames - self.index;
        (left, Some(left))
    }
}

/// A fully materialised stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub records: Vec<FrameRecord>,
    pub activations: Vec<ActivationMap>,
    pub conditions: Vec<f64>,
    pub missed: Vec<usize>,
    pub false_positives: Vec<usize>,
}

pub fn generate_stream(cfg: &SynthConfig) -> Result<SynthData, SynthError> {
    let stream = SynthStream::new(cfg.clone())?;
    let mut data = SynthData {
        records: Vec::with_capacity(cfg.n_frames),
        activations: Vec::with_capacity(cfg.n_frames),
        conditions: Vec::with_capacity(cfg.n_frames),
        missed: Vec::with_capacity(cfg.n_frames),
        false_positives: Vec::with_capacity(cfg.n_frames),
    };
    for f in stream {
        data.records.push(f.record);
        data.activations.push(f.activation);
        data.conditions.push(f.condition);
        data.missed.push(f.n_missed);
        data.false_positives.push(f.n_false_positives);
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    /// False when either variable has zero variance; `value` is then 0.
    pub defined: bool,
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Correlation {
    assert_eq!(x.len(), y.len(), "paired samples required");
    let undefined = Correlation {
        value: 0.0,
        defined: false,
    };
    if x.len() < 2 {
        return undefined;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return undefined;
    }
    Correlation {
        value: sxy / (sxx * syy).sqrt(),
        defined: true,
    }
}

/// Rank correlation between the latent condition and the failure indicator over the
/// labelled frames of a stream.
pub fn condition_failure_correlation(data: &SynthData, labels: &[AlertLabel]) -> Correlation {
    let index: HashMap<&str, usize> = data
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.frame_id.as_str(), i))
        .collect();
    let (cond, fail): (Vec<f64>, Vec<f64>) = labels
        .iter()
        .filter_map(|l| {
            index
                .get(l.frame_id.as_str())
                .map(|&i| (data.conditions[i], l.label.as_target()))
        })
        .unzip();
    spearman(&cond, &fail)
}
