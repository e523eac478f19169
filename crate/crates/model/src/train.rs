//! Loss, Adam, step learning-rate schedule, the training loop, prediction
//! and inference timing.

use std::time::Instant;

use log::{debug, info};
use meshres_core::features::LabeledFeatures;
use meshres_core::ClassId;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::network::{forward_graph, forward_with, ModelConfig, ModelParams, Topology};
use crate::tape::{softmax_rows, Graph};
use crate::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr0: 0.001,
            lr_step: 120,
            lr_gamma: 0.5,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_step == 0 {
            return Err(ModelError::Config("epochs, batch_size and lr_step must be positive".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(ModelError::Config(format!("lr0 {} must be a finite non-negative value", self.lr0)));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(ModelError::Config(format!("lr_gamma {} outside (0, 1]", self.lr_gamma)));
        }
        Ok(())
    }
}

pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.lr_gamma.powi((epoch / config.lr_step) as i32)
}

/// Mean negative log-softmax of the true class.
pub fn loss_ce(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || params.tensors.iter().map(|(_, t)| Array2::zeros(t.raw_dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update of every tensor; `grads` follows
    /// `params.tensors` order.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Array2<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, ((_, p), g)) in params.tensors.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

struct Sample<'a> {
    features: &'a Array2<f64>,
    labels: Vec<usize>,
    topology: Topology,
}

fn prepare<'a>(set: &'a [LabeledFeatures], config: &ModelConfig) -> Result<Vec<Sample<'a>>, ModelError> {
    set.par_iter()
        .map(|s| {
            let features = &s.features.rows;
            if features.ncols() != config.input_dims {
                return Err(ModelError::Config(format!(
                    "feature width {} differs from model input {}",
                    features.ncols(),
                    config.input_dims
                )));
            }
            if s.labels.len() != features.nrows() {
                return Err(ModelError::Config(format!(
                    "{} labels for {} cells",
                    s.labels.len(),
                    features.nrows()
                )));
            }
            let labels: Vec<usize> = s.labels.iter().map(|c| c.index()).collect();
            if labels.iter().any(|&l| l >= config.num_classes) {
                return Err(ModelError::Config("label outside the model's classes".into()));
            }
            Ok(Sample {
                features,
                labels,
                topology: Topology::build(features, config)?,
            })
        })
        .collect()
}

/// Loss and per-tensor gradients for one surface.
fn loss_and_grads(sample: &Sample, params: &ModelParams) -> Result<(f64, Vec<Array2<f64>>), ModelError> {
    let mut g = Graph::new();
    let (logits, vars) = forward_graph(&mut g, sample.features, &sample.topology, params)?;
    let loss = g.cross_entropy(logits, sample.labels.clone());
    let value = g.value(loss)[[0, 0]];
    let mut grads = g.backward(loss);
    let grads = vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, (_, t))| grads.take(v).unwrap_or_else(|| Array2::zeros(t.raw_dim())))
        .collect();
    Ok((value, grads))
}

fn mean_loss(samples: &[Sample], params: &ModelParams) -> Result<f64, ModelError> {
    let losses = samples
        .par_iter()
        .map(|s| Ok(loss_ce(&forward_with(s.features, &s.topology, params)?, &s.labels)))
        .collect::<Result<Vec<f64>, ModelError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mini-batch training. Surfaces may differ in cell count. Returns the
/// parameters with the lowest validation loss, or the final parameters
/// when `val` is empty.
pub fn train(
    train_set: &[LabeledFeatures],
    val_set: &[LabeledFeatures],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainOutput, ModelError> {
    let init = ModelParams::init(model_config, train_config.seed)?;
    train_from(init, train_set, val_set, train_config)
}

pub fn train_from(
    mut params: ModelParams,
    train_set: &[LabeledFeatures],
    val_set: &[LabeledFeatures],
    train_config: &TrainConfig,
) -> Result<TrainOutput, ModelError> {
    train_config.validate()?;
    params.check()?;
    if train_set.is_empty() {
        return Err(ModelError::Config("empty training set".into()));
    }
    let train_samples = prepare(train_set, &params.config)?;
    let val_samples = prepare(val_set, &params.config)?;
    let mut adam = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut history = Vec::with_capacity(train_config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 0..train_config.epochs {
        let lr = lr_schedule(epoch, train_config);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train_config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| loss_and_grads(&train_samples[i], &params))
                .collect::<Result<Vec<_>, ModelError>>()?;
            // reduce in batch order so the sum does not depend on scheduling
            let mut grads: Vec<Array2<f64>> = params.tensors.iter().map(|(_, t)| Array2::zeros(t.raw_dim())).collect();
            for (loss, g) in &results {
                loss_sum += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut params, &grads, lr);
        }
        let train_loss = loss_sum / train_samples.len() as f64;
        if !train_loss.is_finite() {
            return Err(ModelError::Config(format!("training diverged at epoch {epoch}")));
        }
        let val_loss = if val_samples.is_empty() {
            None
        } else {
            Some(mean_loss(&val_samples, &params)?)
        };
        debug!("epoch {epoch} lr {lr:.2e} train {train_loss:.5} val {val_loss:?}");
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, params.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
    }
    let last = train_config.epochs - 1;
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, last),
    };
    info!(
        "trained {} epochs on {} surfaces; keeping epoch {best_epoch}",
        train_config.epochs,
        train_samples.len()
    );
    Ok(TrainOutput {
        params,
        history,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<ClassId>,
    /// Softmax probabilities, `N x classes`.
    pub probabilities: Array2<f64>,
}

/// Row argmax of logits; ties go to the smaller class.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (c, &z) in r.iter().enumerate() {
                if z > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn predict(params: &ModelParams, features: &Array2<f64>) -> Result<Prediction, ModelError> {
    let logits = crate::network::forward(features, params)?;
    prediction_from_logits(&logits)
}

pub fn prediction_from_logits(logits: &Array2<f64>) -> Result<Prediction, ModelError> {
    let labels = argmax_rows(logits)
        .into_iter()
        .map(|c| {
            u8::try_from(c)
                .ok()
                .and_then(ClassId::new)
                .ok_or_else(|| ModelError::Shape(format!("class {c} outside label range")))
        })
        .collect::<Result<_, _>>()?;
    Ok(Prediction {
        labels,
        probabilities: softmax_rows(logits),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub cells: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub min_ms: f64,
}

impl InferenceTiming {
    pub fn from_samples(cells: usize, samples_ms: Vec<f64>) -> Self {
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let p50 = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            cells,
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            p50_ms: p50,
            min_ms: sorted[0],
            samples_ms,
        }
    }
}

/// Wall-clock time of full forward passes (sampling and grouping included)
/// after one untimed warm-up pass.
pub fn measure_inference(
    params: &ModelParams,
    features: &Array2<f64>,
    repeats: usize,
) -> Result<InferenceTiming, ModelError> {
    if repeats < 3 {
        return Err(ModelError::Config(format!("need at least 3 repeats, got {repeats}")));
    }
    crate::network::forward(features, params)?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(crate::network::forward(features, params)?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(InferenceTiming::from_samples(features.nrows(), samples))
}
