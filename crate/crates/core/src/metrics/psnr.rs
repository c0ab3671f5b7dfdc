use serde::{Deserialize, Serialize};

use super::check_pair;
use crate::data::Volume;
use crate::error::{Error, Result};

/// Peak signal-to-noise ratio in dB; identical inputs give `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn from_mse(mse: f64, max_i: f64) -> Psnr {
        if mse == 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Finite(10.0 * (max_i * max_i / mse).log10())
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Psnr {
    type Err = std::num::ParseFloatError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let v: f64 = s.parse()?;
        Ok(if v == f64::INFINITY {
            Psnr::Infinite
        } else {
            Psnr::Finite(v)
        })
    }
}

/// Mean squared error over the selected voxels (all when `select` is `None`).
pub(crate) fn mse_selected(a: &[f32], b: &[f32], select: Option<&[bool]>) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if select.is_none_or(|s| s[i]) {
            let d = x as f64 - y as f64;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metric("empty voxel selection".into()));
    }
    Ok(sum / n as f64)
}

pub fn mse(a: &Volume, b: &Volume) -> Result<f64> {
    check_pair(a, b)?;
    mse_selected(a.voxels(), b.voxels(), None)
}

pub fn psnr(a: &Volume, b: &Volume, max_i: f64) -> Result<Psnr> {
    if !(max_i > 0.0) {
        return Err(Error::config("max_i", "must be > 0"));
    }
    Ok(Psnr::from_mse(mse(a, b)?, max_i))
}
