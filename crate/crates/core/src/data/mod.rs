//! Volume I/O, resampling, intensity normalization, synthetic phantoms and
//! unpaired sampling.

pub mod manifest;
pub mod nifti;
pub mod phantom;
pub mod raw;
mod resample;
mod sampling;
mod volume;

use std::path::Path;

pub use resample::resize_trilinear;
pub use sampling::{sample_unpaired, stack_batch};
pub use volume::{minmax_unit, normalize, Direction, Volume};

use crate::error::{Error, Result};

/// Load a `.nii` file or a `.vjson`/`.vraw` sidecar pair.
pub fn load_volume(path: &Path) -> Result<Volume> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vjson") | Some("vraw") => raw::read_raw(path),
        _ => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            Ok(nifti::parse_nifti(&bytes)?)
        }
    }
}

/// Write a volume as NIfTI-1, or as a raw sidecar pair for `.vjson`/`.vraw` paths.
pub fn save_volume(path: &Path, v: &Volume) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vjson") | Some("vraw") => raw::write_raw(path, v),
        _ => std::fs::write(path, nifti::write_nifti(v)).map_err(|e| Error::io(path, e)),
    }
}
