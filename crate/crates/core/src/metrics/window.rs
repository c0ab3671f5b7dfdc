use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowKind {
    Gaussian { sigma: f64 },
    Uniform,
}

/// Separable local-statistics window and the SSIM stabilizing constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWindow {
    pub extent: usize,
    pub kind: WindowKind,
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MetricWindow {
    fn default() -> Self {
        MetricWindow {
            extent: 7,
            kind: WindowKind::Gaussian { sigma: 1.5 },
            dynamic_range: 1.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl MetricWindow {
    pub fn uniform(extent: usize) -> Self {
        MetricWindow {
            extent,
            kind: WindowKind::Uniform,
            ..MetricWindow::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extent < 3 || self.extent % 2 == 0 {
            return Err(Error::config(
                "window.extent",
                format!("{} (must be odd and >= 3)", self.extent),
            ));
        }
        if let WindowKind::Gaussian { sigma } = self.kind {
            if !(sigma > 0.0) {
                return Err(Error::config("window.sigma", "must be > 0"));
            }
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::config("window.dynamic_range", "must be > 0"));
        }
        Ok(())
    }

    /// One axis of the separable kernel, normalized to sum 1.
    pub fn weights_1d(&self) -> Vec<f64> {
        let r = (self.extent / 2) as f64;
        let raw: Vec<f64> = (0..self.extent)
            .map(|i| match self.kind {
                WindowKind::Gaussian { sigma } => (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp(),
                WindowKind::Uniform => 1.0,
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s).collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}
