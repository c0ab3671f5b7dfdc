use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{CorCoeOptions, LossWeights};
use crate::models::{DiscriminatorConfig, GeneratorConfig};

/// Every training hyperparameter. Unknown keys are rejected when parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
    pub decay_start_epoch: usize,
    pub batch_size: usize,
    /// 0 disables the image pool.
    pub pool_size: usize,
    pub loss_weights: LossWeights,
    pub corcoe: CorCoeOptions,
    pub seed: u64,
    pub volume_shape: [usize; 3],
    pub channels: usize,
    pub base_width: usize,
    pub n_res_blocks: usize,
    pub disc_base_width: usize,
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 200,
            decay_start_epoch: 100,
            batch_size: 1,
            pool_size: 50,
            loss_weights: LossWeights::default(),
            corcoe: CorCoeOptions::default(),
            seed: 0,
            volume_shape: [128, 128, 64],
            channels: 1,
            base_width: 64,
            n_res_blocks: 9,
            disc_base_width: 64,
            checkpoint_interval: 25,
        }
    }
}

impl TrainConfig {
    /// Small grid and widths for CPU-scale runs.
    pub fn desk() -> Self {
        TrainConfig {
            volume_shape: [32, 32, 16],
            base_width: 8,
            disc_base_width: 8,
            ..TrainConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig::new(self.channels, self.base_width, self.n_res_blocks)
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig::new(self.channels, self.disc_base_width)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("{} (must be > 0)", self.lr)));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, format!("{b} (must lie in [0, 1))")));
            }
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::config("eps_adam", "must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.decay_start_epoch >= self.epochs {
            return Err(Error::config(
                "decay_start_epoch",
                format!(
                    "{} must be smaller than epochs ({})",
                    self.decay_start_epoch, self.epochs
                ),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::config("checkpoint_interval", "must be at least 1"));
        }
        self.loss_weights.validate()?;
        if self.volume_shape.iter().any(|&e| e == 0 || e % 4 != 0) {
            return Err(Error::config(
                "volume_shape",
                format!("{:?}: every extent must be a positive multiple of 4", self.volume_shape),
            ));
        }
        self.generator_config().validate()?;
        let d = self.discriminator_config();
        d.validate()?;
        d.output_extents(self.volume_shape)
            .map_err(|e| Error::config("volume_shape", format!("too small for the discriminator: {e}")))?;
        Ok(())
    }
}
