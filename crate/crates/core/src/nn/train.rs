use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::dataset::WindowSample;
use crate::error::config;
use crate::rng;
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 0x5348;
const DROPOUT_STREAM: u64 = 0x4450;

/// Mini-batch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-2,
            batch_size: 32,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return Err(config!("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss of each epoch (dropout active).
    pub loss_curve: Vec<f64>,
}

/// Trains `model` in place with plain SGD on mean cross-entropy.
pub fn train(model: &mut Model, data: &[WindowSample], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, data, cfg, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean_loss)` after each epoch.
///
/// The shuffle order of epoch `e` comes from `(seed, e)` and the dropout masks
/// of sample `i` in epoch `e` from `(seed, e, i)`, so the result depends only
/// on the seed and the data order.
pub fn train_with(
    model: &mut Model,
    data: &[WindowSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(config!("empty training set"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &data[i]).collect();
            let seeds: Vec<u64> = chunk
                .iter()
                .map(|&i| rng::derive(cfg.seed, &[DROPOUT_STREAM, epoch as u64, i as u64]))
                .collect();
            let (loss, mut grads) = model.batch_gradients(&batch, Some(&seeds))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            grads.scale(-cfg.lr);
            for (p, g) in model.params_mut().tensors_mut().iter_mut().zip(&grads.tensors) {
                p.add_assign(g);
            }
        }
        let mean = total / data.len() as f64;
        if !model.params().tensors().iter().all(|t| t.is_finite()) {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    Ok(TrainReport { loss_curve: curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, Origin};
    use crate::nn::{ArchConfig, Variant};
    use rand::Rng as _;

    fn toy(n: usize, w: usize, seed: u64) -> Vec<WindowSample> {
        let mut r = rng::stream(seed, &[]);
        (0..n)
            .map(|i| {
                let label = Label::from_attack(i % 2 == 1);
                let shift = if label.is_attack() { 1.0 } else { -1.0 };
                WindowSample {
                    rssi: (0..w).map(|_| shift + 0.3 * (r.random::<f64>() - 0.5)).collect(),
                    sinr: (0..w).map(|_| -shift + 0.3 * (r.random::<f64>() - 0.5)).collect(),
                    label,
                    origin: Origin { run: i as u64, start: 0 },
                }
            })
            .collect()
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = toy(40, 30, 1);
        let cfg = TrainConfig {
            epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut a = Model::new(ArchConfig::reference(Variant::Attention, 30), 5).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn separable_loss_decreases() {
        let data = toy(64, 30, 2);
        let mut arch = ArchConfig::reference(Variant::Lstm, 30);
        arch.dropout = 0.0;
        let mut m = Model::new(arch, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            seed: 1,
            ..TrainConfig::default()
        };
        let r = train(&mut m, &data, &cfg).unwrap();
        assert!(r.loss_curve.windows(2).all(|w| w[1] < w[0]), "{:?}", r.loss_curve);
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy(8, 30, 3);
        let mut m = Model::new(ArchConfig::reference(Variant::Attention, 30), 1).unwrap();
        let cfg = TrainConfig {
            lr: 1e300,
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut m, &data, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn bad_config_rejected() {
        let mut m = Model::new(ArchConfig::reference(Variant::Attention, 30), 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut m, &toy(4, 30, 1), &cfg), Err(Error::Config(_))));
        assert!(train(&mut m, &[], &TrainConfig::default()).is_err());
    }
}
