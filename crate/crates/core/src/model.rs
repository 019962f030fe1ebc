//! The target classifier: one hidden ReLU layer followed by a softmax output,
//! trained with Adam on cross-entropy.
//!
//! The model consumes any real vector of the encoded width, so relaxed
//! (probability-valued) one-hot blocks are valid inputs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{argmax, log_sum_exp, softmax};

pub const DEFAULT_HIDDEN: usize = 64;

const MAGIC: &[u8; 4] = b"MXMP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    input_dim: usize,
    hidden: usize,
    classes: usize,
    /// hidden × input, row-major
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// classes × hidden, row-major
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Intermediate activations of one forward pass.
struct Forward {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl MlpClassifier {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize) -> Self {
        MlpClassifier {
            input_dim,
            hidden,
            classes,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn initialized(input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(input_dim, hidden, classes);
        let l1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let l2 = (6.0 / (hidden + classes) as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.random_range(-l1..l1));
        m.w2.iter_mut().for_each(|w| *w = rng.random_range(-l2..l2));
        m
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn parameters(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn parameters_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn forward(&self, x: &[f64]) -> Forward {
        debug_assert_eq!(x.len(), self.input_dim);
        let d = self.input_dim;
        let pre: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * d..(h + 1) * d];
                self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let logits = (0..self.classes)
            .map(|c| {
                let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
                self.b2[c] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        Forward {
            pre,
            hidden,
            logits,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).logits
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.forward(x).logits)
    }

    /// Argmax class; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.forward(x).logits)
    }

    pub fn loss(&self, x: &[f64], y: usize) -> f64 {
        let f = self.forward(x);
        log_sum_exp(&f.logits) - f.logits[y]
    }

    /// Cross-entropy loss and its exact gradient with respect to the input.
    pub fn loss_and_input_grad(&self, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        let f = self.forward(x);
        let loss = log_sum_exp(&f.logits) - f.logits[y];
        let mut dlogits = softmax(&f.logits);
        dlogits[y] -= 1.0;
        let dpre = self.hidden_delta(&f, &dlogits);
        let d = self.input_dim;
        let mut grad = vec![0.0; d];
        for (h, &g) in dpre.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &self.w1[h * d..(h + 1) * d];
            for (o, w) in grad.iter_mut().zip(row) {
                *o += g * w;
            }
        }
        (loss, grad)
    }

    fn hidden_delta(&self, f: &Forward, dlogits: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                if f.pre[h] <= 0.0 {
                    return 0.0;
                }
                (0..self.classes)
                    .map(|c| dlogits[c] * self.w2[c * self.hidden + h])
                    .sum()
            })
            .collect()
    }

    /// Accumulates parameter gradients of the loss at `(x, y)` into `grads`
    /// (same layout as [`Self::parameters`]) and returns the loss.
    fn accumulate_param_grad(&self, x: &[f64], y: usize, grads: &mut [Vec<f64>; 4]) -> f64 {
        let f = self.forward(x);
        let loss = log_sum_exp(&f.logits) - f.logits[y];
        let mut dlogits = softmax(&f.logits);
        dlogits[y] -= 1.0;
        let dpre = self.hidden_delta(&f, &dlogits);
        let d = self.input_dim;
        let [gw1, gb1, gw2, gb2] = grads;
        for (c, &g) in dlogits.iter().enumerate() {
            gb2[c] += g;
            for (o, &hv) in gw2[c * self.hidden..(c + 1) * self.hidden].iter_mut().zip(&f.hidden) {
                *o += g * hv;
            }
        }
        for (h, &g) in dpre.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            gb1[h] += g;
            for (o, &xv) in gw1[h * d..(h + 1) * d].iter_mut().zip(x) {
                *o += g * xv;
            }
        }
        loss
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Binary layout: magic `MXMP`, `u32` version, `u64` input dim, hidden
    /// width and class count, then row-major little-endian `f64` arrays
    /// W1, b1, W2, b2.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u64(self.input_dim as u64);
        w.u64(self.hidden as u64);
        w.u64(self.classes as u64);
        for t in self.parameters() {
            w.f64s(t);
        }
        w.finish(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = Reader::open(path, MAGIC, VERSION)?;
        let input_dim = r.usize("input dimension")?;
        let hidden = r.usize("hidden width")?;
        let classes = r.usize("class count")?;
        let w1 = r.f64s(hidden * input_dim)?;
        let b1 = r.f64s(hidden)?;
        let w2 = r.f64s(classes * hidden)?;
        let b2 = r.f64s(classes)?;
        r.finish()?;
        Ok(MlpClassifier {
            input_dim,
            hidden,
            classes,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

pub fn accuracy(model: &MlpClassifier, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let hits = xs.iter().zip(ys).filter(|(x, &y)| model.predict(x) == y).count();
    hits as f64 / xs.len() as f64
}

fn mean_loss(model: &MlpClassifier, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    xs.iter().zip(ys).map(|(x, &y)| model.loss(x, y)).sum::<f64>() / xs.len() as f64
}

/// Mini-batch Adam on mean cross-entropy. Deterministic under `config.seed`.
pub fn train(
    xs: &[Vec<f64>],
    ys: &[usize],
    num_classes: usize,
    config: &TrainConfig,
    holdout: Option<(&[Vec<f64>], &[usize])>,
) -> Result<(MlpClassifier, TrainReport)> {
    if config.epochs == 0 || config.batch_size == 0 || config.hidden == 0 {
        return Err(Error::usage("epochs, batch_size and hidden must all be >= 1"));
    }
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::usage(format!(
            "training set has {} rows and {} labels",
            xs.len(),
            ys.len()
        )));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= num_classes) {
        return Err(Error::usage(format!("label {y} >= class count {num_classes}")));
    }
    let mut present = vec![false; num_classes];
    ys.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::usage("training needs at least 2 classes present"));
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::usage("training rows have inconsistent widths"));
    }

    let mut model = MlpClassifier::initialized(dim, config.hidden, num_classes, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c);
    let zeros = |m: &MlpClassifier| -> [Vec<f64>; 4] {
        m.parameters().map(|t| vec![0.0; t.len()])
    };
    let mut first_moment = zeros(&model);
    let mut second_moment = zeros(&model);
    let mut t = 0_i32;

    let initial_loss = mean_loss(&model, xs, ys);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = zeros(&model);
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.accumulate_param_grad(&xs[i], ys[i], &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            t += 1;
            let bc1 = 1.0 - config.beta1.powi(t);
            let bc2 = 1.0 - config.beta2.powi(t);
            for (((p, g), m), v) in model
                .parameters_mut()
                .into_iter()
                .zip(&grads)
                .zip(first_moment.iter_mut())
                .zip(second_moment.iter_mut())
            {
                for j in 0..p.len() {
                    let gj = g[j] * scale;
                    m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
                    v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    p[j] -= config.learning_rate * mhat / (vhat.sqrt() + config.adam_eps);
                }
            }
            if !model.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
        }
        epoch_losses.push(epoch_loss / xs.len() as f64);
    }

    let report = TrainReport {
        initial_loss,
        epoch_losses,
        train_accuracy: accuracy(&model, xs, ys),
        test_accuracy: holdout.map(|(hx, hy)| accuracy(&model, hx, hy)),
    };
    Ok((model, report))
}
