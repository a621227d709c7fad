//! The alert: a fully connected binary classifier estimating the probability that a
//! frame belongs to the failure class.
//!
//! Hidden layers are affine + ReLU with inverted dropout during training; the single
//! output unit goes through the logistic function. Training minimises binary cross
//! entropy with Adam on class-balanced mini-batches.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{AlertLabel, FeatureVector, Label};

#[derive(Debug, Error)]
pub enum AlertError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("feature dimension mismatch for frame {frame_id}: expected {expected}, found {found}")]
    DimensionMismatch {
        frame_id: String,
        expected: usize,
        found: usize,
    },

    #[error("training data contains a single class")]
    SingleClassDataset,

    #[error("no feature vector for labelled frame {0}")]
    MissingFeature(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Clamp applied to probabilities inside [`bce_loss`].
pub const BCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AlertArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub dropout_rate: f64,
}

impl AlertArchitecture {
    pub fn new(input_dim: usize) -> Self {
        AlertArchitecture {
            input_dim,
            hidden_dims: vec![256, 128],
            dropout_rate: 0.5,
        }
    }

    pub fn with_hidden(mut self, hidden_dims: Vec<usize>) -> Self {
        self.hidden_dims = hidden_dims;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<(), AlertError> {
        if self.input_dim == 0 {
            return Err(AlertError::InvalidArchitecture(
                "input_dim must be >= 1".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(AlertError::InvalidArchitecture(
                "hidden layers must have at least one unit".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(AlertError::InvalidArchitecture(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// (inputs, outputs) of every affine layer, output layer last.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Affine layer with row-major `outputs × inputs` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertModel {
    pub architecture: AlertArchitecture,
    pub layers: Vec<DenseLayer>,
    pub training_seed: u64,
}

impl AlertModel {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                return &mut layer.weights[index];
            }
            index -= layer.weights.len();
            if index < layer.biases.len() {
                return &mut layer.biases[index];
            }
            index -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
    }

    fn zeros_like(&self) -> Vec<DenseLayer> {
        self.layers
            .iter()
            .map(|l| DenseLayer::zeros(l.inputs, l.outputs))
            .collect()
    }

    fn check_dim(&self, x: &FeatureVector) -> Result<(), AlertError> {
        if x.values.len() != self.architecture.input_dim {
            return Err(AlertError::DimensionMismatch {
                frame_id: x.frame_id.clone(),
                expected: self.architecture.input_dim,
                found: x.values.len(),
            });
        }
        Ok(())
    }
}

/// Weights uniform in ±sqrt(6 / fan_in), biases zero.
pub fn init_model(arch: &AlertArchitecture, seed: u64) -> Result<AlertModel, AlertError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(inputs, outputs)| {
            let bound = (6.0 / inputs as f64).sqrt();
            let mut layer = DenseLayer::zeros(inputs, outputs);
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..=bound);
            }
            layer
        })
        .collect();
    Ok(AlertModel {
        architecture: arch.clone(),
        layers,
        training_seed: seed,
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    /// Input to every affine layer (the feature vector, then post-dropout hidden activations).
    inputs: Vec<Vec<f64>>,
    /// Per hidden unit: ReLU derivative times dropout scale.
    gates: Vec<Vec<f64>>,
    probability: f64,
}

fn run(model: &AlertModel, x: &[f64], dropout: Option<&mut ChaCha8Rng>) -> Trace {
    let rate = model.architecture.dropout_rate;
    let keep_scale = 1.0 / (1.0 - rate);
    let mut dropout = dropout;
    let n_layers = model.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut gates = Vec::with_capacity(n_layers - 1);
    inputs.push(x.to_vec());
    let mut z = Vec::new();
    for layer in &model.layers[..n_layers - 1] {
        layer.apply(inputs.last().expect("non-empty"), &mut z);
        let mut gate = Vec::with_capacity(z.len());
        for v in z.iter_mut() {
            let mut g = if *v > 0.0 { 1.0 } else { 0.0 };
            if let Some(rng) = dropout.as_deref_mut() {
                g *= if rng.random::<f64>() >= rate {
                    keep_scale
                } else {
                    0.0
                };
            }
            *v *= g;
            gate.push(g);
        }
        gates.push(gate);
        inputs.push(z.clone());
    }
    model.layers[n_layers - 1].apply(inputs.last().expect("non-empty"), &mut z);
    Trace {
        inputs,
        gates,
        probability: sigmoid(z[0]),
    }
}

/// Accumulates d(BCE)/d(params) of one sample into `grads`.
fn backward(model: &AlertModel, trace: &Trace, y: f64, grads: &mut [DenseLayer]) {
    let mut delta = vec![trace.probability - y];
    for li in (0..model.layers.len()).rev() {
        let layer = &model.layers[li];
        let grad = &mut grads[li];
        let input = &trace.inputs[li];
        for (j, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            grad.biases[j] += d;
            let row = &mut grad.weights[j * layer.inputs..(j + 1) * layer.inputs];
            for (g, a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if li == 0 {
            break;
        }
        let mut prev = vec![0.0; layer.inputs];
        for (j, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &layer.weights[j * layer.inputs..(j + 1) * layer.inputs];
            for (p, w) in prev.iter_mut().zip(row) {
                *p += w * d;
            }
        }
        for (p, g) in prev.iter_mut().zip(&trace.gates[li - 1]) {
            *p *= g;
        }
        delta = prev;
    }
}

/// Failure probability of one feature vector. With `training` set, hidden units are
/// dropped using a generator seeded by `dropout_seed`.
pub fn forward(
    model: &AlertModel,
    x: &FeatureVector,
    training: bool,
    dropout_seed: u64,
) -> Result<f64, AlertError> {
    model.check_dim(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let dropout = training.then_some(&mut rng);
    Ok(run(model, &x.values, dropout).probability)
}

pub fn predict(
    model: &AlertModel,
    features: &[FeatureVector],
) -> Result<Vec<(String, f64)>, AlertError> {
    features.iter().try_for_each(|f| model.check_dim(f))?;
    Ok(features
        .par_iter()
        .map(|f| (f.frame_id.clone(), run(model, &f.values, None).probability))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub balanced_sampling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            balanced_sampling: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AlertError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AlertError::InvalidConfig(
                "learning rate must be > 0".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(AlertError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(AlertError::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draws `count` sample indices: each picks a class with probability 1/2, then a
/// uniform member of that class, with replacement.
pub fn balanced_draws(
    positives: &[usize],
    negatives: &[usize],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    (0..count)
        .map(|_| {
            let pool = if rng.random_bool(0.5) {
                positives
            } else {
                negatives
            };
            pool[rng.random_range(0..pool.len())]
        })
        .collect()
}

struct Adam {
    m: Vec<DenseLayer>,
    v: Vec<DenseLayer>,
    step: i32,
}

impl Adam {
    fn new(model: &AlertModel) -> Self {
        Adam {
            m: model.zeros_like(),
            v: model.zeros_like(),
            step: 0,
        }
    }

    fn update(
        &mut self,
        model: &mut AlertModel,
        grads: &[DenseLayer],
        scale: f64,
        cfg: &TrainConfig,
    ) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let lr = cfg.learning_rate;
        let layers = model
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for ((layer, grad), (m, v)) in layers {
            let pairs = [
                (
                    &mut layer.weights,
                    &grad.weights,
                    &mut m.weights,
                    &mut v.weights,
                ),
                (
                    &mut layer.biases,
                    &grad.biases,
                    &mut m.biases,
                    &mut v.biases,
                ),
            ];
            for (params, g, m, v) in pairs {
                for i in 0..params.len() {
                    let gi = g[i] * scale;
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
                }
            }
        }
    }
}

/// Trains a fresh model on the labelled frames. Returns the model and the mean
/// training loss of every epoch.
pub fn train(
    features: &[FeatureVector],
    labels: &[AlertLabel],
    cfg: &TrainConfig,
    arch: &AlertArchitecture,
) -> Result<(AlertModel, Vec<f64>), AlertError> {
    cfg.validate()?;
    arch.validate()?;

    let by_id: HashMap<&str, &FeatureVector> =
        features.iter().map(|f| (f.frame_id.as_str(), f)).collect();
    let mut xs: Vec<&[f64]> = Vec::with_capacity(labels.len());
    let mut ys: Vec<f64> = Vec::with_capacity(labels.len());
    for label in labels {
        let f = by_id
            .get(label.frame_id.as_str())
            .ok_or_else(|| AlertError::MissingFeature(label.frame_id.clone()))?;
        if f.values.len() != arch.input_dim {
            return Err(AlertError::DimensionMismatch {
                frame_id: f.frame_id.clone(),
                expected: arch.input_dim,
                found: f.values.len(),
            });
        }
        xs.push(&f.values);
        ys.push(label.label.as_target());
    }
    let positives: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] == 1.0).collect();
    let negatives: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] == 0.0).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(AlertError::SingleClassDataset);
    }

    let mut model = init_model(arch, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&model);
    let mut grads = model.zeros_like();
    let n = xs.len();
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let order = if cfg.balanced_sampling {
            balanced_draws(&positives, &negatives, n, &mut rng)
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        };
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in grads.iter_mut() {
                g.weights.fill(0.0);
                g.biases.fill(0.0);
            }
            for &i in batch {
                let trace = run(&model, xs[i], Some(&mut rng));
                epoch_loss += bce_loss(trace.probability, ys[i]);
                backward(&model, &trace, ys[i], &mut grads);
            }
            adam.update(&mut model, &grads, 1.0 / batch.len() as f64, cfg);
        }
        history.push(epoch_loss / n as f64);
    }
    Ok((model, history))
}

/// Analytic gradients of `bce_loss ∘ forward` (no dropout) for every parameter.
pub fn parameter_gradients(
    model: &AlertModel,
    x: &FeatureVector,
    y: Label,
) -> Result<Vec<f64>, AlertError> {
    model.check_dim(x)?;
    let trace = run(model, &x.values, None);
    let mut grads = model.zeros_like();
    backward(model, &trace, y.as_target(), &mut grads);
    Ok(grads
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect())
}

/// Largest relative discrepancy between analytic gradients and central differences
/// with the given step. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    model: &AlertModel,
    x: &FeatureVector,
    y: Label,
    step: f64,
) -> Result<f64, AlertError> {
    let analytic = parameter_gradients(model, x, y)?;
    let target = y.as_target();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let original = *probe.param_mut(i);
        *probe.param_mut(i) = original + step;
        let up = bce_loss(run(&probe, &x.values, None).probability, target);
        *probe.param_mut(i) = original - step;
        let down = bce_loss(run(&probe, &x.values, None).probability, target);
        *probe.param_mut(i) = original;
        let numeric = (up - down) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

const MODEL_MAGIC: &[u8; 4] = b"ALRT";
const MODEL_VERSION: u16 = 1;

/// Serialises a model:
///
/// ```text
/// "ALRT" | u16 version=1 | u16 reserved=0 | u32 input_dim | u32 n_hidden | u32 hidden[n_hidden]
/// | f64 dropout_rate | u64 training_seed | u32 n_layers
/// | per layer: u32 inputs | u32 outputs | f64 weights[outputs*inputs] | f64 biases[outputs]
/// ```
///
/// All integers and reals little-endian.
pub fn write_model<W: Write>(model: &AlertModel, mut w: W) -> Result<(), AlertError> {
    let arch = &model.architecture;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&(arch.input_dim as u32).to_le_bytes())?;
    w.write_all(&(arch.hidden_dims.len() as u32).to_le_bytes())?;
    for h in &arch.hidden_dims {
        w.write_all(&(*h as u32).to_le_bytes())?;
    }
    w.write_all(&arch.dropout_rate.to_le_bytes())?;
    w.write_all(&model.training_seed.to_le_bytes())?;
    w.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for layer in &model.layers {
        w.write_all(&(layer.inputs as u32).to_le_bytes())?;
        w.write_all(&(layer.outputs as u32).to_le_bytes())?;
        for v in layer.weights.iter().chain(&layer.biases) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AlertError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| AlertError::CorruptModel("unexpected end of file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, AlertError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<usize, AlertError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64, AlertError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, AlertError> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| AlertError::CorruptModel("parameter count overflows".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<AlertModel, AlertError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MODEL_MAGIC {
        return Err(AlertError::CorruptModel("bad magic".into()));
    }
    let version = c.u16()?;
    if version != MODEL_VERSION {
        return Err(AlertError::CorruptModel(format!(
            "unsupported version {version}"
        )));
    }
    c.u16()?;
    let input_dim = c.u32()?;
    let n_hidden = c.u32()?;
    let hidden_dims = (0..n_hidden)
        .map(|_| c.u32())
        .collect::<Result<Vec<_>, _>>()?;
    let dropout_rate = f64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes"));
    let training_seed = c.u64()?;
    let architecture = AlertArchitecture {
        input_dim,
        hidden_dims,
        dropout_rate,
    };
    architecture
        .validate()
        .map_err(|e| AlertError::CorruptModel(e.to_string()))?;

    let shapes = architecture.layer_shapes();
    let n_layers = c.u32()?;
    if n_layers != shapes.len() {
        return Err(AlertError::CorruptModel(format!(
            "expected {} layers, found {n_layers}",
            shapes.len()
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (inputs, outputs) in shapes {
        let (fi, fo) = (c.u32()?, c.u32()?);
        if (fi, fo) != (inputs, outputs) {
            return Err(AlertError::CorruptModel(format!(
                "layer shape {fi}x{fo} does not match architecture {inputs}x{outputs}"
            )));
        }
        let weights = c.f64s(inputs * outputs)?;
        let biases = c.f64s(outputs)?;
        layers.push(DenseLayer {
            inputs,
            outputs,
            weights,
            biases,
        });
    }
    if c.pos != buf.len() {
        return Err(AlertError::CorruptModel("trailing bytes".into()));
    }
    let model = AlertModel {
        architecture,
        layers,
        training_seed,
    };
    if model.params().any(|v| !v.is_finite()) {
        return Err(AlertError::CorruptModel("non-finite parameter".into()));
    }
    Ok(model)
}
