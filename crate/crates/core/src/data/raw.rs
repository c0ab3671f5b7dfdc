//! Raw sidecar format: `<name>.vraw` holds little-endian float32 voxels in
//! volume order, `<name>.vjson` the geometry.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::volume::Volume;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMeta {
    pub extents: [usize; 3],
    pub channels: usize,
    pub spacing: [f32; 3],
    /// Row-major 4x4 voxel-to-world transform.
    pub affine: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_range: Option<[f32; 2]>,
}

fn pair(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("vjson"), path.with_extension("vraw"))
}

pub fn write_raw(path: &Path, v: &Volume) -> Result<()> {
    let (meta_path, data_path) = pair(path);
    let meta = RawMeta {
        extents: v.extents(),
        channels: v.channels(),
        spacing: v.spacing(),
        affine: v.affine().iter().flatten().copied().collect(),
        intensity_range: v.intensity_range(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    let bytes: Vec<u8> = v.voxels().iter().flat_map(|x| x.to_le_bytes()).collect();
    std::fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))
}

pub fn read_raw(path: &Path) -> Result<Volume> {
    let (meta_path, data_path) = pair(path);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: RawMeta = serde_json::from_str(&text)?;
    if meta.affine.len() != 16 {
        return Err(Error::Data(format!(
            "{}: affine has {} entries (16 expected)",
            meta_path.display(),
            meta.affine.len()
        )));
    }
    let bytes = std::fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!(
            "{}: length {} is not a multiple of 4",
            data_path.display(),
            bytes.len()
        )));
    }
    let voxels: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut affine = [[0.0f32; 4]; 4];
    for (i, v) in meta.affine.iter().enumerate() {
        affine[i / 4][i % 4] = *v;
    }
    let v = Volume::new(meta.extents, meta.channels, voxels)
        .map_err(|e| Error::Data(format!("{}: {e}", data_path.display())))?
        .with_spacing(meta.spacing)?
        .with_affine(affine)
        .with_intensity_range(meta.intensity_range);
    Ok(v)
}
