use super::TrainConfig;
use crate::error::{Error, Result};

/// Constant `lr` before `decay_start_epoch`, then linear decay reaching 0
/// exactly at `epochs`.
pub fn lr_at_epoch(e: usize, cfg: &TrainConfig) -> Result<f64> {
    if e > cfg.epochs {
        return Err(Error::config(
            "epoch",
            format!("{e} is past the last epoch {}", cfg.epochs),
        ));
    }
    if e < cfg.decay_start_epoch {
        return Ok(cfg.lr);
    }
    Ok(cfg.lr * (cfg.epochs - e) as f64 / (cfg.epochs - cfg.decay_start_epoch) as f64)
}
