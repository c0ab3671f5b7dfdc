use serde::{Deserialize, Serialize};

use super::check_pair;
use crate::data::Volume;
use crate::error::{Error, Result};

pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanRow {
    pub case: String,
    /// Mean of the two per-scan mean intensities.
    pub mean: f64,
    /// Generated minus ground truth.
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlandAltman {
    pub rows: Vec<BlandAltmanRow>,
    pub bias: f64,
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

#[derive(Serialize)]
struct Summary {
    n: usize,
    bias: f64,
    sd: f64,
    loa_low: f64,
    loa_high: f64,
}

impl BlandAltman {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,mean,diff\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.case, r.mean, r.diff));
        }
        s
    }

    pub fn summary_json(&self) -> Result<String> {
        let s = Summary {
            n: self.rows.len(),
            bias: self.bias,
            sd: self.sd,
            loa_low: self.loa_low,
            loa_high: self.loa_high,
        };
        Ok(serde_json::to_string_pretty(&s)? + "\n")
    }
}

/// Agreement of per-scan mean intensity over `(case, generated, truth)`.
pub fn bland_altman(pairs: &[(&str, &Volume, &Volume)]) -> Result<BlandAltman> {
    let rows = pairs
        .iter()
        .map(|&(case, gen, gt)| {
            check_pair(gen, gt)?;
            let (mg, mt) = (gen.mean(), gt.mean());
            Ok(BlandAltmanRow {
                case: case.to_string(),
                mean: (mg + mt) / 2.0,
                diff: mg - mt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    bland_altman_from_rows(rows)
}

pub fn bland_altman_from_rows(rows: Vec<BlandAltmanRow>) -> Result<BlandAltman> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Metric(format!("Bland-Altman needs >= 2 pairs, found {n}")));
    }
    if let Some(r) = rows.iter().find(|r| !r.diff.is_finite() || !r.mean.is_finite()) {
        return Err(Error::Metric(format!("non-finite intensity for case {}", r.case)));
    }
    let bias = rows.iter().map(|r| r.diff).sum::<f64>() / n as f64;
    let ss: f64 = rows.iter().map(|r| (r.diff - bias) * (r.diff - bias)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    Ok(BlandAltman {
        rows,
        bias,
        sd,
        loa_low: bias - LOA_Z * sd,
        loa_high: bias + LOA_Z * sd,
    })
}
