//! Command-line front end: `synth → eval-map → label → pool → train → predict → metrics`,
//! plus `monitor` for sliding-window alarms over a temporally ordered stream.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::alert::{self, AlertArchitecture, AlertError, TrainConfig};
use crate::formats::{self, FormatError, LabelHeader, LayerRef, Manifest, ManifestEntry};
use crate::labeling::{self, LabelError, LabelingConfig, DEFAULT_PERCENTILE};
use crate::map_eval::{self, EvalError, MapConfig, WindowMode};
use crate::metrics::{DrAggregate, EvalReport, MetricError, RamConfig, ScoredFrame};
use crate::model::{FeatureName, FeatureVector, ModelError};
use crate::pool::{self, PoolError, PoolKind};
use crate::synth::{ConditionOverride, SynthConfig, SynthError, SynthStream};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("--percentile and --lambda are mutually exclusive")]
    ConflictingFlags,

    #[error("manifest entry '{0}' lists no activation files")]
    MissingActivation(String),

    #[error("monitor needs an order index on every manifest entry")]
    MissingOrder,

    #[error("no score for frame '{0}'")]
    MissingScore(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error(transparent)]
    Label(#[from] LabelError),

    #[error(transparent)]
    Pool(#[from] PoolError),

    #[error(transparent)]
    Alert(#[from] AlertError),

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error(transparent)]
    Synth(#[from] SynthError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(_) => EXIT_INVARIANT,
            CliError::Format(e) if e.is_invariant_violation() => EXIT_INVARIANT,
            CliError::Label(LabelError::InvalidMap { .. }) => EXIT_INVARIANT,
            _ => EXIT_INPUT,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "alertkit",
    version,
    about = "Predict when a detector's per-frame mAP drops below a critical threshold"
)]
pub struct Cli {
    /// Seed for every random draw (synthetic data, weight init, sampling, dropout).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic degradation stream in the toolkit's file formats.
    Synth(SynthArgs),
    /// Per-frame mAP from ground-truth and detection files.
    EvalMap(EvalMapArgs),
    /// Failure/success labels from per-frame mAP.
    Label(LabelArgs),
    /// Pool activation maps (or detections) into feature vectors.
    Pool(PoolArgs),
    /// Train the alert classifier.
    Train(TrainArgs),
    /// Failure probabilities from a trained alert.
    Predict(PredictArgs),
    /// Evaluation report for alert scores against labels.
    Metrics(MetricsArgs),
    /// Sliding-window pooled mAP and failure alarms over an ordered stream.
    Monitor(MonitorArgs),
}

#[derive(Debug, Clone, Args)]
pub struct MapArgs {
    /// IoU thresholds as `start:step:end` or a comma-separated list.
    #[arg(long, default_value = "0.5:0.05:0.95")]
    pub iou_grid: String,

    #[arg(long, default_value_t = 101)]
    pub recall_points: usize,

    /// Comma-separated category labels.
    #[arg(long, default_value = "person,car")]
    pub categories: String,
}

impl MapArgs {
    pub fn config(&self) -> Result<MapConfig, CliError> {
        Ok(MapConfig::new(
            parse_iou_grid(&self.iou_grid)?,
            self.recall_points,
            split_list(&self.categories),
        )?)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long, default_value_t = 1000)]
    pub frames: usize,

    #[arg(long, default_value_t = 64)]
    pub channels: usize,

    /// Starting condition in [0, 1]; drawn from the seed when omitted.
    #[arg(long)]
    pub initial_condition: Option<f64>,

    /// Force the condition on a frame range, `start:end:value` (end exclusive). Repeatable.
    #[arg(long = "segment")]
    pub segments: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalMapArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub det: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub map: MapArgs,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Per-frame mAP file from `eval-map`.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// λ is the k-th percentile of the observed mAPs (default 25).
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Fixed λ.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// mean_max_std, mean, max, std, mean_std, mean_max, layer or detection.
    #[arg(long, default_value = "mean_max_std")]
    pub feature: String,
    /// Detections scoring at or below this are ignored by the detection feature.
    #[arg(long, default_value_t = 0.5)]
    pub score_cutoff: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Feature to train on when the feature file holds several.
    #[arg(long)]
    pub feature: Option<FeatureName>,
    /// Comma-separated hidden widths; empty for logistic regression.
    #[arg(long, default_value = "256,128")]
    pub hidden: String,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Optional CSV of the mean loss of every epoch.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub feature: Option<FeatureName>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// JSON report; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of the mAP vs declaration-rate curve.
    #[arg(long)]
    pub dr_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub warning_threshold: f64,
    #[arg(long, default_value = "0.25,0.5,0.75,1.0")]
    pub rates: String,
    /// Ground truth and detections; when both are given the DR curve uses pooled mAP.
    #[arg(long, requires = "det")]
    pub gt: Option<PathBuf>,
    #[arg(long, requires = "gt")]
    pub det: Option<PathBuf>,
    #[command(flatten)]
    pub map: MapArgs,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV alarm log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 0.5)]
    pub warning_threshold: f64,
    #[command(flatten)]
    pub map: MapArgs,
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_f64(s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::InvalidArgument(format!("'{s}' is not a number")))
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, CliError> {
    split_list(s).iter().map(|p| parse_f64(p)).collect()
}

/// `start:step:end` (inclusive) or a comma-separated list.
pub fn parse_iou_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [one] => parse_f64_list(one),
        [lo, step, hi] => {
            let (lo, step, hi) = (parse_f64(lo)?, parse_f64(step)?, parse_f64(hi)?);
            if !(step > 0.0 && hi >= lo) {
                return Err(CliError::InvalidArgument(format!("bad IoU grid '{s}'")));
            }
            let intervals = ((hi - lo) / step).round();
            if ((lo + intervals * step) - hi).abs() > 1e-9 {
                return Err(CliError::InvalidArgument(format!(
                    "IoU grid '{s}': step does not divide the range"
                )));
            }
            let n = intervals as usize;
            if n == 0 {
                return Ok(vec![lo]);
            }
            Ok((0..=n)
                .map(|i| lo + (hi - lo) * i as f64 / n as f64)
                .collect())
        }
        _ => Err(CliError::InvalidArgument(format!("bad IoU grid '{s}'"))),
    }
}

fn parse_segment(s: &str) -> Result<ConditionOverride, CliError> {
    let bad = || CliError::InvalidArgument(format!("segment '{s}' is not start:end:value"));
    let parts: Vec<&str> = s.split(':').collect();
    let [start, end, value] = parts.as_slice() else {
        return Err(bad());
    };
    Ok(ConditionOverride {
        start: start.trim().parse().map_err(|_| bad())?,
        end: end.trim().parse().map_err(|_| bad())?,
        value: parse_f64(value)?,
    })
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, seed, out),
        Command::EvalMap(a) => cmd_eval_map(&a, out),
        Command::Label(a) => cmd_label(&a, out),
        Command::Pool(a) => cmd_pool(&a, out),
        Command::Train(a) => cmd_train(&a, seed, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Metrics(a) => cmd_metrics(&a, out),
        Command::Monitor(a) => cmd_monitor(&a, out),
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{msg}").map_err(io_err(Path::new("<stdout>")))
}

pub fn cmd_synth(a: &SynthArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_frames: a.frames,
        seed,
        channels: a.channels,
        initial_condition: a.initial_condition,
        condition_overrides: a
            .segments
            .iter()
            .map(|s| parse_segment(s))
            .collect::<Result<_, _>>()?,
        ..SynthConfig::default()
    };
    let stream = SynthStream::new(cfg.clone())?;
    let acts_dir = a.out.join("acts");
    std::fs::create_dir_all(&acts_dir).map_err(io_err(&acts_dir))?;

    let conditions_path = a.out.join("conditions.csv");
    let mut conditions =
        BufWriter::new(File::create(&conditions_path).map_err(io_err(&conditions_path))?);
    writeln!(conditions, "frame_id,condition,missed,false_positives")
        .map_err(io_err(&conditions_path))?;

    let mut records = Vec::with_capacity(cfg.n_frames);
    let mut entries = Vec::with_capacity(cfg.n_frames);
    for (i, frame) in stream.enumerate() {
        let id = frame.record.frame_id.clone();
        let rel = PathBuf::from("acts").join(format!("{id}.actf"));
        formats::write_actf(&a.out.join(&rel), &frame.activation)?;
        writeln!(
            conditions,
            "{id},{},{},{}",
            frame.condition, frame.n_missed, frame.n_false_positives
        )
        .map_err(io_err(&conditions_path))?;
        entries.push(ManifestEntry {
            frame_id: id,
            detections: Some("det.jsonl".into()),
            groundtruth: Some("gt.jsonl".into()),
            activations: vec![LayerRef {
                layer: cfg.layer_name.clone(),
                path: rel,
            }],
            order: Some(i as u64),
        });
        records.push(frame.record);
    }
    conditions.flush().map_err(io_err(&conditions_path))?;
    formats::write_frames(&records, &a.out.join("gt.jsonl"), &a.out.join("det.jsonl"))?;
    Manifest { entries }.write(&a.out.join("manifest.jsonl"))?;
    say(
        out,
        format_args!("wrote {} frames to {}", records.len(), a.out.display()),
    )
}

pub fn cmd_eval_map(a: &EvalMapArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = a.map.config()?;
    let frames = formats::read_frames(&a.gt, Some(&a.det), None)?;
    let maps: Vec<(String, Option<f64>)> = frames
        .iter()
        .map(|f| f.frame_id.clone())
        .zip(map_eval::per_frame_maps(&frames, &cfg))
        .collect();
    let summary = formats::write_map_file(&a.out, &maps)?;
    say(
        out,
        format_args!(
            "frames={} evaluated={} undefined={}",
            summary.frames, summary.evaluated, summary.undefined
        ),
    )
}

pub fn cmd_label(a: &LabelArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (cfg, header_mode) = match (a.percentile, a.lambda) {
        (Some(_), Some(_)) => return Err(CliError::ConflictingFlags),
        (Some(k), None) => (LabelingConfig::Percentile(k), ("percentile", Some(k))),
        (None, Some(v)) => (LabelingConfig::Absolute(v), ("absolute", None)),
        (None, None) => (
            LabelingConfig::Percentile(DEFAULT_PERCENTILE),
            ("percentile", Some(DEFAULT_PERCENTILE)),
        ),
    };
    // frames without ground truth have no mAP and cannot be labelled
    let maps: Vec<(String, f64)> = formats::read_map_file(&a.maps)?
        .into_iter()
        .filter_map(|(id, m)| m.map(|m| (id, m)))
        .collect();
    let (lambda, labels) = labeling::assign_labels(&maps, cfg)?;
    let header = LabelHeader {
        lambda,
        mode: header_mode.0.to_string(),
        percentile: header_mode.1,
    };
    formats::write_label_file(&a.out, &header, &labels)?;
    let failures = labels.iter().filter(|l| l.label.is_failure()).count();
    say(
        out,
        format_args!(
            "lambda={lambda} frames={} failures={failures}",
            labels.len()
        ),
    )
}

pub fn cmd_pool(a: &PoolArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = Manifest::read(&a.manifest)?;
    let features: Vec<FeatureVector> = if a.feature == "detection" {
        let frames = manifest.load_frames()?;
        let per_frame: Vec<[FeatureVector; 2]> = frames
            .iter()
            .map(|f| Ok(pool::detection_features(f, a.score_cutoff)?.into_vectors(&f.frame_id)))
            .collect::<Result<_, CliError>>()?;
        // all mean_conf_score lines, then all n_proposals lines
        let (mean, count): (Vec<_>, Vec<_>) = per_frame.into_iter().map(|[m, c]| (m, c)).unzip();
        mean.into_iter().chain(count).collect()
    } else {
        let kind: PoolKind = a.feature.parse()?;
        manifest
            .entries
            .par_iter()
            .map(|e| {
                if e.activations.is_empty() {
                    return Err(CliError::MissingActivation(e.frame_id.clone()));
                }
                let maps = manifest.load_activations(e)?;
                Ok(pool::extract(kind, &maps)?)
            })
            .collect::<Result<_, CliError>>()?
    };
    check_dimensions(&features)?;
    formats::write_features(&a.out, &features)?;
    say(
        out,
        format_args!(
            "wrote {} feature vectors to {}",
            features.len(),
            a.out.display()
        ),
    )
}

fn check_dimensions(features: &[FeatureVector]) -> Result<(), CliError> {
    let mut dims: HashMap<FeatureName, usize> = HashMap::new();
    for f in features {
        let expected = *dims.entry(f.name).or_insert(f.len());
        if expected != f.len() {
            return Err(AlertError::DimensionMismatch {
                frame_id: f.frame_id.clone(),
                expected,
                found: f.len(),
            }
            .into());
        }
    }
    Ok(())
}

/// Reads a feature file, requiring a single feature name unless one is selected.
fn load_features(path: &Path, name: Option<FeatureName>) -> Result<Vec<FeatureVector>, CliError> {
    let features = formats::read_features(path, name)?;
    if let Some(first) = features.first() {
        if let Some(other) = features.iter().find(|f| f.name != first.name) {
            return Err(CliError::InvalidArgument(format!(
                "{} holds features '{}' and '{}'; select one with --feature",
                path.display(),
                first.name,
                other.name
            )));
        }
    }
    if features.is_empty() {
        return Err(CliError::InvalidArgument(format!(
            "{} holds no matching feature vectors",
            path.display()
        )));
    }
    Ok(features)
}

pub fn cmd_train(a: &TrainArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let features = load_features(&a.features, a.feature)?;
    let (_, labels) = formats::read_label_file(&a.labels)?;
    let hidden = split_list(&a.hidden)
        .iter()
        .map(|h| {
            h.parse::<usize>()
                .map_err(|_| CliError::InvalidArgument(format!("hidden width '{h}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let arch = AlertArchitecture::new(features[0].len())
        .with_hidden(hidden)
        .with_dropout(a.dropout);
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed,
        ..TrainConfig::default()
    };
    let (model, history) = alert::train(&features, &labels, &cfg, &arch)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(&a.out).map_err(io_err(&a.out))?;
    let mut w = BufWriter::new(file);
    alert::write_model(&model, &mut w)?;
    w.flush().map_err(io_err(&a.out))?;
    if let Some(h) = &a.history {
        let mut text = String::from("epoch,loss\n");
        for (i, l) in history.iter().enumerate() {
            text.push_str(&format!("{},{l}\n", i + 1));
        }
        std::fs::write(h, text).map_err(io_err(h))?;
    }
    say(
        out,
        format_args!(
            "trained {} parameters on {} frames; final loss {}",
            model.param_count(),
            labels.len(),
            history.last().copied().unwrap_or(f64::NAN)
        ),
    )
}

pub fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = File::open(&a.model).map_err(io_err(&a.model))?;
    let model = alert::read_model(BufReader::new(file))?;
    let features = load_features(&a.features, a.feature)?;
    let scores = alert::predict(&model, &features)?;
    formats::write_scores(&a.out, &scores)?;
    say(out, format_args!("scored {} frames", scores.len()))
}

fn score_index(path: &Path) -> Result<HashMap<String, f64>, CliError> {
    Ok(formats::read_scores(path)?.into_iter().collect())
}

pub fn cmd_metrics(a: &MetricsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let scores = score_index(&a.scores)?;
    let (_, labels) = formats::read_label_file(&a.labels)?;
    let frames: Vec<ScoredFrame> = labels
        .into_iter()
        .map(|l| {
            let s = *scores
                .get(&l.frame_id)
                .ok_or_else(|| CliError::MissingScore(l.frame_id.clone()))?;
            Ok(ScoredFrame {
                frame_id: l.frame_id,
                failure_score: s,
                true_label: l.label,
                per_frame_map: l.per_frame_map,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let ram = RamConfig {
        warning_threshold: a.warning_threshold,
        ..RamConfig::default()
    };
    let rates = parse_f64_list(&a.rates)?;
    let map_cfg = a.map.config()?;
    let records = match (&a.gt, &a.det) {
        (Some(gt), Some(det)) => Some(formats::read_frames(gt, Some(det), None)?),
        _ => None,
    };
    let aggregate = match &records {
        Some(records) => DrAggregate::Pooled {
            records,
            cfg: &map_cfg,
        },
        None => DrAggregate::MeanPerFrame,
    };
    let report = EvalReport::compute(&frames, &ram, &rates, aggregate)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match &a.out {
        Some(p) => std::fs::write(p, format!("{json}\n")).map_err(io_err(p))?,
        None => say(out, format_args!("{json}"))?,
    }
    if let Some(p) = &a.dr_out {
        std::fs::write(p, report.dr_curve_csv()).map_err(io_err(p))?;
    }
    Ok(())
}

/// One line of the monitor log.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorWindow {
    pub end_index: usize,
    pub frame_id: String,
    pub pooled_map: Option<f64>,
    pub mean_failure_probability: f64,
    pub alarm: bool,
}

/// Sliding windows over frames in temporal order. Pooled mAP is reported only when
/// `records` carry ground truth.
pub fn monitor_windows(
    frame_ids: &[String],
    scores: &HashMap<String, f64>,
    records: Option<&[crate::model::FrameRecord]>,
    window: usize,
    warning_threshold: f64,
    cfg: &MapConfig,
) -> Result<Vec<MonitorWindow>, CliError> {
    if window == 0 {
        return Err(EvalError::EmptyWindow.into());
    }
    if window > frame_ids.len() {
        return Err(EvalError::WindowTooLarge {
            window,
            frames: frame_ids.len(),
        }
        .into());
    }
    let probs: Vec<f64> = frame_ids
        .iter()
        .map(|id| {
            scores
                .get(id)
                .copied()
                .ok_or_else(|| CliError::MissingScore(id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let maps = match records {
        Some(r) => Some(map_eval::sliding_window_map(
            r,
            window,
            cfg,
            WindowMode::Pooled,
        )?),
        None => None,
    };
    Ok((window - 1..frame_ids.len())
        .map(|end| {
            let mean = probs[end + 1 - window..=end].iter().sum::<f64>() / window as f64;
            MonitorWindow {
                end_index: end,
                frame_id: frame_ids[end].clone(),
                pooled_map: maps.as_ref().and_then(|m| m[end + 1 - window].map),
                mean_failure_probability: mean,
                alarm: mean > warning_threshold,
            }
        })
        .collect())
}

pub fn cmd_monitor(a: &MonitorArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.warning_threshold) {
        return Err(CliError::InvalidArgument(format!(
            "warning threshold {} outside [0, 1]",
            a.warning_threshold
        )));
    }
    let cfg = a.map.config()?;
    let manifest = Manifest::read(&a.manifest)?;
    let ordered: Vec<ManifestEntry> = manifest
        .temporal_order()
        .ok_or(CliError::MissingOrder)?
        .into_iter()
        .cloned()
        .collect();
    let has_gt = ordered.iter().any(|e| e.groundtruth.is_some());
    let ordered = Manifest { entries: ordered };
    let ids = ordered.frame_ids();
    let records = if has_gt {
        Some(ordered.load_frames()?)
    } else {
        None
    };
    let scores = score_index(&a.scores)?;
    let windows = monitor_windows(
        &ids,
        &scores,
        records.as_deref(),
        a.window,
        a.warning_threshold,
        &cfg,
    )?;

    let mut text = String::from("end_index,frame_id,pooled_map,mean_failure_probability,alarm\n");
    for w in &windows {
        let map = w.pooled_map.map(|m| m.to_string()).unwrap_or_default();
        text.push_str(&format!(
            "{},{},{map},{},{}\n",
            w.end_index, w.frame_id, w.mean_failure_probability, w.alarm as u8
        ));
    }
    std::fs::write(&a.out, text).map_err(io_err(&a.out))?;
    let alarms = windows.iter().filter(|w| w.alarm).count();
    say(
        out,
        format_args!("{} windows, {alarms} alarms", windows.len()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_eval::coco_iou_thresholds;

    #[test]
    fn iou_grid_matches_default() {
        assert_eq!(
            parse_iou_grid("0.5:0.05:0.95").unwrap(),
            coco_iou_thresholds()
        );
        assert_eq!(parse_iou_grid("0.5,0.75").unwrap(), vec![0.5, 0.75]);
        assert_eq!(parse_iou_grid("0.5:0.1:0.5").unwrap(), vec![0.5]);
        assert!(parse_iou_grid("0.5:0.07:0.95").is_err());
        assert!(parse_iou_grid("a:b").is_err());
    }

    #[test]
    fn segments_parse() {
        let s = parse_segment("10:20:0.9").unwrap();
        assert_eq!((s.start, s.end, s.value), (10, 20, 0.9));
        assert!(parse_segment("10:20").is_err());
    }

    #[test]
    fn exit_codes() {
        let inv = CliError::Model(ModelError::InvalidScore(2.0));
        assert_eq!(inv.exit_code(), EXIT_INVARIANT);
        assert_eq!(CliError::ConflictingFlags.exit_code(), EXIT_INPUT);
        assert_eq!(CliError::MissingOrder.exit_code(), EXIT_INPUT);
    }

    #[test]
    fn monitor_alarm_is_strict() {
        let ids: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let scores: HashMap<String, f64> = ids.iter().cloned().zip([0.5, 0.5, 0.9, 0.9]).collect();
        let w = monitor_windows(&ids, &scores, None, 2, 0.5, &MapConfig::default()).unwrap();
        let alarms: Vec<bool> = w.iter().map(|w| w.alarm).collect();
        assert_eq!(alarms, vec![false, true, true]);
        assert!(w.iter().all(|w| w.pooled_map.is_none()));
    }
}
