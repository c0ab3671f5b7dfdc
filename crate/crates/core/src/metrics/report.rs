use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::psnr::mse_selected;
use super::{check_pair, ms_ssim3d_masked, ssim3d_masked, MetricWindow, Psnr, MS_SSIM_WEIGHTS};
use crate::data::Volume;
use crate::error::{Error, Result};
use crate::losses::pearson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Whole,
    TumorOnly,
    TumorMasked,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Whole, Region::TumorOnly, Region::TumorMasked];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Whole => "whole",
            Region::TumorOnly => "tumor_only",
            Region::TumorMasked => "tumor_masked",
        }
    }

    pub fn needs_mask(self) -> bool {
        self != Region::Whole
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| {
            Error::config(
                "region",
                format!("unknown region {s:?} (whole|tumor_only|tumor_masked)"),
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ssim,
    Msssim,
    Psnr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ssim, Metric::Msssim, Metric::Psnr];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::Msssim => "msssim",
            Metric::Psnr => "psnr",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssim" => Ok(Metric::Ssim),
            "msssim" | "ms_ssim" | "ms-ssim" => Ok(Metric::Msssim),
            "psnr" => Ok(Metric::Psnr),
            _ => Err(Error::config(
                "metric",
                format!("unknown metric {s:?} (ssim|msssim|psnr)"),
            )),
        }
    }
}

/// Settings shared by every row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub window: MetricWindow,
    pub ms_weights: Vec<f64>,
    pub max_i: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            window: MetricWindow::default(),
            ms_weights: MS_SSIM_WEIGHTS.to_vec(),
            max_i: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub case: String,
    pub region: Region,
    pub ssim: f64,
    pub msssim: f64,
    pub psnr: Psnr,
}

impl EvalRow {
    /// The metric as a float; infinite PSNR maps to `+inf`.
    pub fn value(&self, m: Metric) -> f64 {
        match m {
            Metric::Ssim => self.ssim,
            Metric::Msssim => self.msssim,
            Metric::Psnr => self.psnr.as_f64(),
        }
    }
}

fn selection(mask: Option<&Volume>, like: &Volume, region: Region) -> Result<Option<Vec<bool>>> {
    if region == Region::Whole {
        return Ok(None);
    }
    let mask = mask.ok_or_else(|| Error::Metric(format!("region {region} needs a tumor mask")))?;
    if mask.extents() != like.extents() || mask.channels() != 1 {
        return Err(Error::Metric(format!(
            "mask {}x{:?} does not match volume {:?}",
            mask.channels(),
            mask.extents(),
            like.extents()
        )));
    }
    let inside = region == Region::TumorOnly;
    let sel: Vec<bool> = mask.voxels().iter().map(|&m| (m > 0.5) == inside).collect();
    if !sel.iter().any(|&s| s) {
        return Err(Error::Metric(format!("empty selection for region {region}")));
    }
    Ok(Some(sel))
}

/// Mean squared error over the voxels a region selects, in every channel.
pub fn region_mse(gen: &Volume, gt: &Volume, mask: Option<&Volume>, region: Region) -> Result<f64> {
    check_pair(gen, gt)?;
    let sel = selection(mask, gen, region)?;
    let per_voxel = sel.map(|s| s.repeat(gen.channels()));
    mse_selected(gen.voxels(), gt.voxels(), per_voxel.as_deref())
}

/// One report row for `gen` against `gt`. Outside `whole`, PSNR uses only the
/// selected voxels and SSIM only windows centered on them.
pub fn masked_metrics(
    case: &str,
    gen: &Volume,
    gt: &Volume,
    mask: Option<&Volume>,
    region: Region,
    cfg: &MetricConfig,
) -> Result<EvalRow> {
    check_pair(gen, gt)?;
    if !(cfg.max_i > 0.0) {
        return Err(Error::config("max_i", "must be > 0"));
    }
    let sel = selection(mask, gen, region)?;
    let ssim = ssim3d_masked(gen, gt, &cfg.window, sel.as_deref())?;
    let msssim = ms_ssim3d_masked(gen, gt, &cfg.window, &cfg.ms_weights, sel.as_deref())?;
    let mse = region_mse(gen, gt, mask, region)?;
    Ok(EvalRow {
        case: case.to_string(),
        region,
        ssim,
        msssim,
        psnr: Psnr::from_mse(mse, cfg.max_i),
    })
}

/// Rows for every requested region of one case.
pub fn evaluate_case(
    case: &str,
    gen: &Volume,
    gt: &Volume,
    mask: Option<&Volume>,
    regions: &[Region],
    cfg: &MetricConfig,
) -> Result<Vec<EvalRow>> {
    regions
        .iter()
        .map(|&r| masked_metrics(case, gen, gt, mask, r, cfg))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub n: usize,
    pub mean: f64,
    /// Sample (n - 1) standard deviation; absent for a single value.
    pub std: Option<f64>,
}

impl MetricAggregate {
    pub fn from_values(values: &[f64]) -> Option<MetricAggregate> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Some(MetricAggregate { n, mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub region: Region,
    pub cases: usize,
    pub ssim: Option<MetricAggregate>,
    pub msssim: Option<MetricAggregate>,
    /// Over finite rows only; see `psnr_infinite`.
    pub psnr: Option<MetricAggregate>,
    pub psnr_infinite: usize,
}

pub const EVAL_CSV_HEADER: &str = "case,region,ssim,msssim,psnr";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Self {
        EvalReport { rows }
    }

    pub fn regions(&self) -> Vec<Region> {
        let mut out = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.region) {
                out.push(r.region);
            }
        }
        out
    }

    pub fn rows_in(&self, region: Region) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(move |r| r.region == region)
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.regions()
            .into_iter()
            .map(|region| {
                let rows: Vec<&EvalRow> = self.rows_in(region).collect();
                let col = |m: Metric| rows.iter().map(|r| r.value(m)).collect::<Vec<_>>();
                let finite: Vec<f64> = rows.iter().filter_map(|r| r.psnr.finite()).collect();
                Aggregate {
                    region,
                    cases: rows.len(),
                    ssim: MetricAggregate::from_values(&col(Metric::Ssim)),
                    msssim: MetricAggregate::from_values(&col(Metric::Msssim)),
                    psnr: MetricAggregate::from_values(&finite),
                    psnr_infinite: rows.len() - finite.len(),
                }
            })
            .collect()
    }

    pub fn aggregates_json(&self) -> Result<String> {
        let body = serde_json::json!({ "aggregates": self.aggregates() });
        Ok(serde_json::to_string_pretty(&body)? + "\n")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(EVAL_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.case, r.region, r.ssim, r.msssim, r.psnr));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == EVAL_CSV_HEADER => {}
            other => {
                return Err(Error::Data(format!(
                    "report header {:?}, expected {EVAL_CSV_HEADER:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let bad = |what: &str| Error::Data(format!("report row {}: {what}", i + 1));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
            rows.push(EvalRow {
                case: f[0].to_string(),
                region: f[1].parse()?,
                ssim: num(f[2])?,
                msssim: num(f[3])?,
                psnr: f[4].parse().map_err(|_| bad(&format!("bad psnr {:?}", f[4])))?,
            });
        }
        Ok(EvalReport { rows })
    }
}

/// Case-wise `a - b` for one (case, region) key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub case: String,
    pub region: Region,
    pub ssim: f64,
    pub msssim: f64,
    /// Infinite when exactly one side is infinite; 0 when both are.
    pub psnr: f64,
}

impl PairedDelta {
    pub fn value(&self, m: Metric) -> f64 {
        match m {
            Metric::Ssim => self.ssim,
            Metric::Msssim => self.msssim,
            Metric::Psnr => self.psnr,
        }
    }
}

/// Equal-width bins over the finite deltas; infinite values land in the end
/// bins so the counts always sum to the number of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize) -> Result<Histogram> {
        if bins == 0 {
            return Err(Error::config("bins", "must be >= 1"));
        }
        let finite = values.iter().copied().filter(|v| v.is_finite());
        let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if lo > hi {
            (lo, hi) = (0.0, 1.0);
        } else if lo == hi {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let idx = if v == f64::NEG_INFINITY {
                0
            } else if v == f64::INFINITY {
                bins - 1
            } else if v.is_nan() {
                return Err(Error::Metric("NaN delta in histogram".into()));
            } else {
                (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize
            };
            counts[idx] += 1;
        }
        Ok(Histogram { edges, counts })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDiff {
    pub deltas: Vec<PairedDelta>,
    pub histograms: IndexMap<String, Histogram>,
}

pub const DELTA_CSV_HEADER: &str = "case,region,ssim,msssim,psnr";

impl PairedDiff {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(DELTA_CSV_HEADER);
        s.push('\n');
        for d in &self.deltas {
            s.push_str(&format!("{},{},{},{},{}\n", d.case, d.region, d.ssim, d.msssim, d.psnr));
        }
        s
    }

    pub fn histograms_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.histograms)? + "\n")
    }
}

fn psnr_delta(a: Psnr, b: Psnr) -> f64 {
    match (a, b) {
        (Psnr::Finite(x), Psnr::Finite(y)) => x - y,
        (Psnr::Infinite, Psnr::Infinite) => 0.0,
        (Psnr::Infinite, _) => f64::INFINITY,
        (_, Psnr::Infinite) => f64::NEG_INFINITY,
    }
}

/// Deltas `a - b` matched on (case, region). Histogram keys are
/// `{region}.{metric}`.
pub fn paired_diff_report(a: &EvalReport, b: &EvalReport, bins: usize) -> Result<PairedDiff> {
    let key = |r: &EvalRow| (r.case.clone(), r.region);
    let mut index: IndexMap<(String, Region), &EvalRow> = IndexMap::new();
    for r in &b.rows {
        if index.insert(key(r), r).is_some() {
            return Err(Error::Data(format!(
                "duplicate row {} {} in second report",
                r.case, r.region
            )));
        }
    }
    let mut deltas = Vec::with_capacity(a.rows.len());
    let mut seen = std::collections::HashSet::new();
    for ra in &a.rows {
        if !seen.insert(key(ra)) {
            return Err(Error::Data(format!(
                "duplicate row {} {} in first report",
                ra.case, ra.region
            )));
        }
        let rb = index
            .get(&key(ra))
            .ok_or_else(|| Error::Data(format!("case {} ({}) missing from second report", ra.case, ra.region)))?;
        deltas.push(PairedDelta {
            case: ra.case.clone(),
            region: ra.region,
            ssim: ra.ssim - rb.ssim,
            msssim: ra.msssim - rb.msssim,
            psnr: psnr_delta(ra.psnr, rb.psnr),
        });
    }
    if let Some((k, _)) = index.iter().find(|(k, _)| !seen.contains(*k)) {
        return Err(Error::Data(format!("case {} ({}) missing from first report", k.0, k.1)));
    }
    let mut histograms = IndexMap::new();
    for region in a.regions() {
        for m in Metric::ALL {
            let values: Vec<f64> = deltas
                .iter()
                .filter(|d| d.region == region)
                .map(|d| d.value(m))
                .collect();
            histograms.insert(format!("{region}.{m}"), Histogram::build(&values, bins)?);
        }
    }
    Ok(PairedDiff { deltas, histograms })
}

/// Pearson r between two metric columns across the cases of one region.
pub fn metric_correlation(report: &EvalReport, region: Region, m1: Metric, m2: Metric) -> Result<f64> {
    let rows: Vec<&EvalRow> = report.rows_in(region).collect();
    if rows.len() < 3 {
        return Err(Error::Metric(format!(
            "correlation needs >= 3 cases, found {}",
            rows.len()
        )));
    }
    let col = |m: Metric| -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let v = r.value(m);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Metric(format!("case {} has non-finite {m}", r.case)))
                }
            })
            .collect()
    };
    pearson(&col(m1)?, &col(m2)?).map_err(|_| {
        Error::Metric(format!(
            "correlation of {m1} and {m2} is undefined for a constant column"
        ))
    })
}
