//! Adam training with linear warmup into a quarter-period cosine decay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::MaliteMn;
use super::ops::softmax_cross_entropy;
use super::tensor::{NoTally, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: the published learning-rate span and schedule
    /// shape with far fewer epochs and a short warmup.
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr_start: 1e-4,
            lr_end: 5e-5,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale constants: 1000 epochs with a 5000-step warmup.
    pub fn full_scale() -> TrainConfig {
        TrainConfig {
            epochs: 1000,
            warmup_steps: 5000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return Err(Error::InvalidConfig("need lr_start >= lr_end > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate at a 0-indexed global step. Warmup ramps linearly to
    /// `lr_start` (step 0 yields `lr_start / warmup_steps`), then a quarter
    /// cosine period decays to exactly `lr_end` at the final step.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let warmup = self.warmup_steps;
        if warmup > 0 && step < warmup {
            return self.lr_start * (step + 1) as f64 / warmup as f64;
        }
        let last = total_steps.saturating_sub(1);
        let u = if last <= warmup {
            1.0
        } else {
            (step - warmup) as f64 / (last - warmup) as f64
        };
        self.lr_end + (self.lr_start - self.lr_end) * (std::f64::consts::FRAC_PI_2 * u).cos()
    }
}

/// Adam state, one (m, v) pair per parameter tensor in visit order.
pub struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(model: &mut MaliteMn) -> Adam {
        let mut m = Vec::new();
        model.for_each_param(&mut |p| m.push(vec![0.0f32; p.data.len()]));
        let v = m.clone();
        Adam { m, v, t: 0 }
    }

    pub fn step(&mut self, model: &mut MaliteMn, cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let eps = cfg.epsilon as f32;
        let scale = (lr / bc1) as f32;
        let bc2 = bc2 as f32;
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.for_each_param(&mut |p| {
            let (m, v) = (&mut ms[i], &mut vs[i]);
            for j in 0..p.data.len() {
                let g = p.grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                p.data[j] -= scale * m[j] / ((v[j] / bc2).sqrt() + eps);
            }
            i += 1;
        });
    }
}

/// One forward/backward/update on a batch. Returns the batch loss.
pub fn train_step(
    model: &mut MaliteMn,
    adam: &mut Adam,
    cfg: &TrainConfig,
    lr: f64,
    batch: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    model.zero_grad();
    let logits = model.forward(batch, true, &mut NoTally)?;
    let (loss, grad) = softmax_cross_entropy(&logits, labels);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "loss became {loss} at optimizer step {}",
            adam.t + 1
        )));
    }
    model.backward(&grad);
    adam.step(model, cfg, lr);
    Ok(loss)
}

/// Deterministic epoch shuffle derived from (seed, epoch).
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[16] = 0x5e;
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Epoch/batch loop over an in-memory dataset (one stacked tensor).
/// Returns the mean loss per epoch.
pub fn fit(
    model: &mut MaliteMn,
    images: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = images.n();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {n} images",
            labels.len()
        )));
    }
    let sample_len = images.data.len() / n;
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut adam = Adam::new(model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, n);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Tensor::zeros([chunk.len(), images.h(), images.w(), images.c()]);
            let mut batch_labels = Vec::with_capacity(chunk.len());
            for (slot, &idx) in chunk.iter().enumerate() {
                batch.data[slot * sample_len..(slot + 1) * sample_len]
                    .copy_from_slice(&images.data[idx * sample_len..(idx + 1) * sample_len]);
                batch_labels.push(labels[idx]);
            }
            let lr = cfg.lr_at(step, total_steps);
            epoch_loss += train_step(model, &mut adam, cfg, lr, &batch, &batch_labels)?;
            step += 1;
        }
        history.push(epoch_loss / batches_per_epoch as f64);
    }
    Ok(history)
}
