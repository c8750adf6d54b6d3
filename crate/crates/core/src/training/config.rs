use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epoch indices (0-based) from which the learning rate is multiplied by
    /// `decay_factor` once more.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub momentum: f64,
    /// L2 coefficient applied to dense-layer weights only.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 128,
            learning_rate: 0.1,
            decay_epochs: vec![60, 100],
            decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The default schedule compressed to `epochs`, decay points scaled by the same ratio.
    pub fn scaled(epochs: usize) -> Self {
        let base = Self::default();
        let decay_epochs = base
            .decay_epochs
            .iter()
            .map(|&e| ((e * epochs) as f64 / base.epochs as f64).round() as usize)
            .collect();
        Self {
            epochs,
            decay_epochs,
            ..base
        }
    }

    /// 30 epochs, decays at 15 and 25.
    pub fn desk() -> Self {
        Self::scaled(30)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let n = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * self.decay_factor.powi(n as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "bad learning rate {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "momentum must lie in [0,1) and weight_decay be >= 0".into(),
            ));
        }
        Ok(())
    }
}
