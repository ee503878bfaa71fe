//! The 784x10 linear classifier: squared-error loss against one-hot targets,
//! analytic gradients, and seeded minibatch SGD.
//!
//! Weights are stored pixel-major, class-minor (`weights[pixel * 10 + class]`),
//! the same order used on the wire.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{ClientDataset, Sample, PIXELS_PER_IMAGE};

pub const NUM_CLASSES: usize = 10;
pub const WEIGHT_COUNT: usize = PIXELS_PER_IMAGE * NUM_CLASSES;
pub const PARAM_COUNT: usize = WEIGHT_COUNT + NUM_CLASSES;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty dataset")]
    EmptyData,
}

/// Coefficients and intercepts of the linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros() -> Self {
        ModelParams {
            weights: vec![0.0; WEIGHT_COUNT],
            bias: vec![0.0; NUM_CLASSES],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    /// Wire layout: 7850 f32 values, weights then bias.
    pub fn to_wire(&self) -> Vec<f32> {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .map(|&v| v as f32)
            .collect()
    }

    pub fn from_wire(values: &[f32]) -> Option<Self> {
        if values.len() != PARAM_COUNT {
            return None;
        }
        Some(ModelParams {
            weights: values[..WEIGHT_COUNT].iter().map(|&v| f64::from(v)).collect(),
            bias: values[WEIGHT_COUNT..].iter().map(|&v| f64::from(v)).collect(),
        })
    }
}

/// Accumulated gradient direction from one round of local training.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientUpdate {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
    pub num_samples: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Class scores `weights^T x + bias` for one sample.
pub fn outputs(params: &ModelParams, pixels: &[f32]) -> [f64; NUM_CLASSES] {
    let mut out = [0.0; NUM_CLASSES];
    out.copy_from_slice(&params.bias);
    for (p, &x) in pixels.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let x = f64::from(x);
        let row = &params.weights[p * NUM_CLASSES..(p + 1) * NUM_CLASSES];
        for (c, &w) in row.iter().enumerate() {
            out[c] += w * x;
        }
    }
    out
}

/// Argmax class with ties broken toward the lowest index.
pub fn predict(params: &ModelParams, pixels: &[f32]) -> u8 {
    let out = outputs(params, pixels);
    let mut best = 0usize;
    for c in 1..NUM_CLASSES {
        if out[c] > out[best] {
            best = c;
        }
    }
    best as u8
}

fn accumulate_residuals<'a>(
    params: &ModelParams,
    samples: impl Iterator<Item = &'a Sample>,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> usize {
    let mut count = 0;
    for sample in samples {
        let mut residual = outputs(params, &sample.pixels);
        residual[sample.label as usize] -= 1.0;
        for (p, &x) in sample.pixels.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let x = f64::from(x);
            let row = &mut d_weights[p * NUM_CLASSES..(p + 1) * NUM_CLASSES];
            for (c, slot) in row.iter_mut().enumerate() {
                *slot += x * residual[c];
            }
        }
        for (c, slot) in d_bias.iter_mut().enumerate() {
            *slot += residual[c];
        }
        count += 1;
    }
    count
}

/// Mean squared-error loss `1/2 ||out - onehot(label)||^2` over the dataset.
pub fn local_loss(params: &ModelParams, data: &ClientDataset) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let mut total = 0.0;
    for sample in &data.samples {
        let mut residual = outputs(params, &sample.pixels);
        residual[sample.label as usize] -= 1.0;
        total += 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Analytic gradient of the mean per-sample loss over a batch.
pub fn gradient(params: &ModelParams, batch: &[Sample]) -> Result<GradientUpdate, ModelError> {
    gradient_over(params, batch.iter())
}

fn gradient_over<'a>(
    params: &ModelParams,
    samples: impl Iterator<Item = &'a Sample>,
) -> Result<GradientUpdate, ModelError> {
    let mut d_weights = vec![0.0; WEIGHT_COUNT];
    let mut d_bias = vec![0.0; NUM_CLASSES];
    let count = accumulate_residuals(params, samples, &mut d_weights, &mut d_bias);
    if count == 0 {
        return Err(ModelError::EmptyData);
    }
    let inv = 1.0 / count as f64;
    d_weights.iter_mut().for_each(|v| *v *= inv);
    d_bias.iter_mut().for_each(|v| *v *= inv);
    Ok(GradientUpdate {
        d_weights,
        d_bias,
        num_samples: count as u32,
    })
}

/// Runs seeded minibatch SGD from `start` and returns the trained parameters
/// together with the accumulated direction `(start - end) / learning_rate`.
pub fn local_train(
    start: &ModelParams,
    data: &ClientDataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, GradientUpdate), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let mut params = start.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let lr = cfg.learning_rate;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let grad = gradient_over(&params, chunk.iter().map(|&i| &data.samples[i]))?;
            for (w, g) in params.weights.iter_mut().zip(&grad.d_weights) {
                *w -= lr * g;
            }
            for (b, g) in params.bias.iter_mut().zip(&grad.d_bias) {
                *b -= lr * g;
            }
        }
    }
    let update = GradientUpdate {
        d_weights: start
            .weights
            .iter()
            .zip(&params.weights)
            .map(|(s, e)| (s - e) / lr)
            .collect(),
        d_bias: start
            .bias
            .iter()
            .zip(&params.bias)
            .map(|(s, e)| (s - e) / lr)
            .collect(),
        num_samples: data.len() as u32,
    };
    Ok((params, update))
}
