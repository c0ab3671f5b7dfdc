//! Volumetric unpaired image-to-image translation: a 3D CycleGAN (two
//! generators, two patch discriminators) trained with least-squares
//! adversarial, cycle-consistency and correlation-coefficient losses, plus
//! volume I/O, synthetic phantom data and 3D image-quality metrics.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod training;

pub use error::{Error, Result};
pub use voxcore;
