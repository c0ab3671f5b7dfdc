//! Volume directories and the shared volume-to-model preparation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use voxcore::Tensor;
use voxcycle::data::{load_volume, minmax_unit, normalize, resize_trilinear, Direction, Volume};

use crate::error::{CliError, Result};

/// Which generator domain a volume belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// T1-like source; min-max rescaled per volume.
    X,
    /// FA-like target; already in `[0, 1]`.
    Y,
}

/// Resize to the model grid and map to `[-1, 1]`.
pub fn prepare(v: &Volume, shape: [usize; 3], domain: Domain) -> Result<Volume> {
    let resized = resize_trilinear(v, shape)?;
    let unit = match domain {
        Domain::X => minmax_unit(&resized),
        Domain::Y => resized,
    };
    Ok(normalize(&unit, Direction::ToModel)?)
}

pub fn to_model_tensor(v: &Volume, shape: [usize; 3], domain: Domain) -> Result<Tensor<f32>> {
    Ok(prepare(v, shape, domain)?.to_tensor())
}

fn case_id(path: &Path) -> Option<String> {
    match path.extension()?.to_str()? {
        "nii" | "vjson" => Some(path.file_stem()?.to_str()?.to_string()),
        _ => None,
    }
}

/// Volumes in `dir` keyed by file stem, in id order. `.vraw` halves of raw
/// pairs are skipped in favour of their `.vjson`.
pub fn list_volumes(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if let Some(id) = case_id(&path) {
            if let Some(prev) = out.insert(id.clone(), path.clone()) {
                return Err(CliError::Data(format!(
                    "case `{id}` appears twice: {} and {}",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no .nii or .vjson volumes", dir.display())));
    }
    Ok(out)
}

/// Pair the volumes of two directories by case id; any unmatched id is an error.
pub fn match_cases(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let la = list_volumes(a)?;
    let lb = list_volumes(b)?;
    let only = |x: &BTreeMap<String, PathBuf>, y: &BTreeMap<String, PathBuf>| -> Vec<String> {
        x.keys().filter(|k| !y.contains_key(*k)).cloned().collect()
    };
    let (oa, ob) = (only(&la, &lb), only(&lb, &la));
    if !oa.is_empty() || !ob.is_empty() {
        return Err(CliError::Data(format!(
            "case ids differ: only in {}: {oa:?}; only in {}: {ob:?}",
            a.display(),
            b.display()
        )));
    }
    Ok(la
        .into_iter()
        .map(|(id, pa)| {
            let pb = lb[&id].clone();
            (id, pa, pb)
        })
        .collect())
}

pub fn load(path: &Path) -> Result<Volume> {
    Ok(load_volume(path)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Data(format!("serialize: {e}")))
}
