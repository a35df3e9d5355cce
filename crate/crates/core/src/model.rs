//! Model engine: a dense softmax classifier (multinomial logistic regression,
//! optionally with tanh hidden layers), mini-batch SGD on cross-entropy,
//! evaluation, and weighted parameter averaging.
//!
//! Parameters are stored flat. Layer `l` maps `shape[l]` inputs to
//! `shape[l + 1]` outputs and occupies `shape[l] * shape[l + 1]` weights
//! (row-major by input unit) followed by `shape[l + 1]` biases.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Layer {
    fn weight(&self, i: usize, j: usize) -> usize {
        self.offset + i * self.outputs + j
    }

    fn bias(&self, j: usize) -> usize {
        self.offset + self.inputs * self.outputs + j
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "need at least input and output dims, got {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "every dim must be >= 1, got {shape:?}"
        )));
    }
    Ok(())
}

fn layers_of(shape: &[usize]) -> Vec<Layer> {
    let mut offset = 0;
    shape
        .windows(2)
        .map(|w| {
            let layer = Layer {
                inputs: w[0],
                outputs: w[1],
                offset,
            };
            offset += w[0] * w[1] + w[1];
            layer
        })
        .collect()
}

impl ModelParams {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected = Self::param_count(&shape);
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("construction"));
        }
        Ok(Self { values, shape })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        let n = Self::param_count(&shape);
        Ok(Self {
            values: vec![0.0; n],
            shape,
        })
    }

    /// Number of weights plus biases implied by `shape`.
    pub fn param_count(shape: &[usize]) -> usize {
        shape.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.shape.last().expect("validated shape")
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn layers(&self) -> Vec<Layer> {
        layers_of(&self.shape)
    }

    fn check_compatible(&self, data: &Dataset) -> Result<()> {
        if data.input_dim() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, dataset has {}",
                self.input_dim(),
                data.input_dim()
            )));
        }
        if data.num_classes() != self.num_classes() {
            return Err(Error::ShapeMismatch(format!(
                "model has {} classes, dataset has {}",
                self.num_classes(),
                data.num_classes()
            )));
        }
        Ok(())
    }
}

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        input_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be >= 1".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values do not form {} rows of width {input_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            input_dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Copies the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            input_dim: self.input_dim,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Same features with a replacement label vector.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        if labels.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        Dataset::new(
            self.features.clone(),
            self.input_dim,
            labels,
            self.num_classes,
        )
    }

    /// Splits into the first `k` rows and the rest.
    pub fn split_at(&self, k: usize) -> (Dataset, Dataset) {
        let k = k.min(self.len());
        let head: Vec<usize> = (0..k).collect();
        let tail: Vec<usize> = (k..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 16,
            local_steps: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.local_steps == 0 {
            return Err(Error::InvalidConfig("local_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for the
/// weights and biases of each layer.
pub fn init_model(shape: &[usize], seed: u64) -> Result<ModelParams> {
    validate_shape(shape)?;
    let mut rng = seeded_rng(seed);
    let mut values = Vec::with_capacity(ModelParams::param_count(shape));
    for layer in layers_of(shape) {
        let s = 1.0 / (layer.inputs as f64).sqrt();
        let n = layer.inputs * layer.outputs + layer.outputs;
        values.extend((0..n).map(|_| rng.random_range(-s..=s)));
    }
    ModelParams::new(shape.to_vec(), values)
}

/// Per-layer outputs of a forward pass. Hidden layers hold tanh activations,
/// the last layer holds raw logits.
fn forward(params: &ModelParams, layers: &[Layer], x: &[f64], acts: &mut [Vec<f64>]) {
    let w = &params.values;
    for (l, layer) in layers.iter().enumerate() {
        let (done, rest) = acts.split_at_mut(l);
        let input: &[f64] = if l == 0 { x } else { &done[l - 1] };
        let out = &mut rest[0];
        out.clear();
        out.extend((0..layer.outputs).map(|j| w[layer.bias(j)]));
        for (i, &xi) in input.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w[layer.weight(i, 0)..layer.weight(i, 0) + layer.outputs];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
        if l + 1 < layers.len() {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
    }
}

fn alloc_acts(layers: &[Layer]) -> Vec<Vec<f64>> {
    layers
        .iter()
        .map(|l| Vec::with_capacity(l.outputs))
        .collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

/// In-place softmax, returns log-sum-exp of the input.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    logits.iter_mut().for_each(|v| *v /= sum);
    max + sum.ln()
}

pub fn predict(params: &ModelParams, x: &[f64]) -> usize {
    let layers = params.layers();
    let mut acts = alloc_acts(&layers);
    forward(params, &layers, x, &mut acts);
    argmax(acts.last().expect("at least one layer"))
}

/// Mean softmax cross-entropy over the rows in `batch` and its gradient with
/// respect to every parameter.
pub fn loss_and_gradient(
    params: &ModelParams,
    data: &Dataset,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    params.check_compatible(data)?;
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let layers = params.layers();
    let mut acts = alloc_acts(&layers);
    let mut grad = vec![0.0; params.values.len()];
    let mut loss = 0.0;
    let max_width = params.shape.iter().copied().max().unwrap_or(0);
    let mut delta = Vec::with_capacity(max_width);
    let mut delta_prev = Vec::with_capacity(max_width);

    for &idx in batch {
        let x = data.row(idx);
        let y = data.labels[idx];
        forward(params, &layers, x, &mut acts);

        let last = layers.len() - 1;
        let lse = {
            let logits = &acts[last];
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        };
        loss += lse - acts[last][y];

        delta.clear();
        delta.extend_from_slice(&acts[last]);
        softmax_in_place(&mut delta);
        delta[y] -= 1.0;

        for l in (0..layers.len()).rev() {
            let layer = layers[l];
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            for (j, &d) in delta.iter().enumerate() {
                grad[layer.bias(j)] += d;
            }
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let base = layer.weight(i, 0);
                for (j, &d) in delta.iter().enumerate() {
                    grad[base + j] += xi * d;
                }
            }
            if l > 0 {
                delta_prev.clear();
                for (i, &a) in input.iter().enumerate() {
                    let base = layer.weight(i, 0);
                    let back: f64 = delta
                        .iter()
                        .enumerate()
                        .map(|(j, &d)| params.values[base + j] * d)
                        .sum();
                    delta_prev.push(back * (1.0 - a * a));
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Runs `cfg.local_steps` mini-batch SGD steps starting from `params`.
///
/// Rows are visited in a seeded shuffled order without replacement; the last
/// partial batch of a pass is used as is and the order is reshuffled for the
/// next pass.
pub fn local_train(params: &ModelParams, data: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.check_compatible(data)?;

    let mut rng = seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;
    let mut current = params.clone();

    for _ in 0..cfg.local_steps {
        if pos >= order.len() {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let end = (pos + cfg.batch_size).min(order.len());
        let (_, grad) = loss_and_gradient(&current, data, &order[pos..end])?;
        pos = end;
        for (w, g) in current.values.iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
    }

    if current.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("local training"));
    }
    Ok(current)
}

pub fn evaluate(params: &ModelParams, data: &Dataset, metric: Metric) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.check_compatible(data)?;
    match metric {
        Metric::Accuracy => {
            let layers = params.layers();
            let mut acts = alloc_acts(&layers);
            let correct = (0..data.len())
                .filter(|&i| {
                    forward(params, &layers, data.row(i), &mut acts);
                    argmax(acts.last().expect("at least one layer")) == data.labels[i]
                })
                .count();
            Ok(correct as f64 / data.len() as f64)
        }
    }
}

/// Weighted mean of parameter vectors. Weights are normalized to sum to one
/// before accumulation.
pub fn aggregate(updates: &[(&ModelParams, f64)]) -> Result<ModelParams> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one update".into()))?;
    if let Some((p, _)) = updates.iter().find(|(p, _)| p.shape != first.shape) {
        return Err(Error::ShapeMismatch(format!(
            "cannot aggregate shapes {:?} and {:?}",
            first.shape, p.shape
        )));
    }
    if let Some((_, w)) = updates.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "aggregation weight must be finite and >= 0, got {w}"
        )));
    }
    let total: f64 = updates.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("aggregation weights sum to zero".into()));
    }

    let mut values = vec![0.0; first.values.len()];
    for (p, w) in updates {
        let w = w / total;
        for (acc, v) in values.iter_mut().zip(&p.values) {
            *acc += w * v;
        }
    }
    Ok(ModelParams {
        values,
        shape: first.shape.clone(),
    })
}
