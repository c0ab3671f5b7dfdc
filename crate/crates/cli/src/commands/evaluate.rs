use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::Serialize;
use voxcycle::metrics::{
    bland_altman, evaluate_case, metric_correlation, EvalReport, EvalRow, Metric, MetricConfig, Region,
};

use crate::error::{CliError, Result};
use crate::io::{list_volumes, load, match_cases, to_json, write_text};
use crate::run::{create_dir, RunRecorder};

pub const EVAL_CSV: &str = "eval.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const BLAND_ALTMAN_CSV: &str = "bland_altman.csv";
pub const BLAND_ALTMAN_JSON: &str = "bland_altman.json";
pub const CORRELATION_JSON: &str = "correlation.json";

/// `metric:metric`, e.g. `ssim:psnr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MetricPair(pub Metric, pub Metric);

impl FromStr for MetricPair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("`{s}`: expected metric:metric"))?;
        let m = |x: &str| x.parse::<Metric>().map_err(|e| e.to_string());
        Ok(MetricPair(m(a)?, m(b)?))
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Generated volumes, one per case id.
    #[arg(long)]
    pub gen: PathBuf,
    /// Ground-truth volumes with the same case ids.
    #[arg(long)]
    pub gt: PathBuf,
    /// Lesion masks; required for the tumor regions.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "whole")]
    pub regions: Vec<Region>,
    /// Also write per-case mean/difference pairs with bias and limits.
    #[arg(long)]
    pub bland_altman: bool,
    /// Metric pairs to correlate across cases, e.g. ssim:psnr,msssim:psnr.
    #[arg(long, value_delimiter = ',')]
    pub correlate: Vec<MetricPair>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct CorrelationEntry {
    region: Region,
    x: Metric,
    y: Metric,
    n: usize,
    /// `None` when the coefficient is undefined, e.g. a constant column.
    r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

fn unique_regions(regions: &[Region]) -> Vec<Region> {
    let mut out = Vec::new();
    for r in regions {
        if !out.contains(r) {
            out.push(*r);
        }
    }
    out
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    let regions = unique_regions(&args.regions);
    if regions.is_empty() {
        return Err(CliError::Usage("--regions is empty".into()));
    }
    let cases = match_cases(&args.gen, &args.gt)?;
    let masks = match &args.mask {
        Some(dir) => Some(list_volumes(dir)?),
        None if regions.iter().any(|r| r.needs_mask()) => {
            return Err(CliError::Usage("masked regions requested without --mask".into()));
        }
        None => None,
    };
    if let Some(m) = &masks {
        let missing: Vec<&str> = cases
            .iter()
            .map(|c| c.0.as_str())
            .filter(|id| !m.contains_key(*id))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::Data(format!("no mask for cases {missing:?}")));
        }
    }
    let mut run = RunRecorder::new("evaluate", args, None)?;
    for (_, g, t) in &cases {
        run.input(g);
        run.input(t);
    }
    let cfg = MetricConfig::default();
    let per_case: Vec<Result<(Vec<EvalRow>, _, _)>> = voxcore::parallel::map_indexed(cases.len(), |i| {
        let (id, gp, tp) = &cases[i];
        let gen = load(gp)?;
        let gt = load(tp)?;
        let mask = masks.as_ref().map(|m| load(&m[id])).transpose()?;
        let rows = evaluate_case(id, &gen, &gt, mask.as_ref(), &regions, &cfg)?;
        Ok((rows, gen, gt))
    });
    let mut rows = Vec::new();
    let mut volumes = Vec::new();
    for (r, (id, _, _)) in per_case.into_iter().zip(&cases) {
        let (case_rows, gen, gt) = r?;
        rows.extend(case_rows);
        if args.bland_altman {
            volumes.push((id.as_str(), gen, gt));
        }
    }
    let report = EvalReport::new(rows);

    create_dir(&args.out)?;
    let mut emit = |name: &str, text: String| -> Result<()> {
        let p = args.out.join(name);
        write_text(&p, &text)?;
        run.output(p);
        Ok(())
    };
    emit(EVAL_CSV, report.to_csv())?;
    emit(SUMMARY_JSON, report.aggregates_json()?)?;
    if args.bland_altman {
        let refs: Vec<_> = volumes.iter().map(|(id, g, t)| (*id, g, t)).collect();
        let ba = bland_altman(&refs)?;
        emit(BLAND_ALTMAN_CSV, ba.to_csv())?;
        emit(BLAND_ALTMAN_JSON, ba.summary_json()?)?;
    }
    if !args.correlate.is_empty() {
        let mut entries = Vec::new();
        for &region in &regions {
            for &MetricPair(x, y) in &args.correlate {
                let (r, reason) = match metric_correlation(&report, region, x, y) {
                    Ok(r) => (Some(r), None),
                    Err(e) => {
                        eprintln!("voxcycle: {} {}:{}: {e}", region.as_str(), x.as_str(), y.as_str());
                        (None, Some(e.to_string()))
                    }
                };
                entries.push(CorrelationEntry {
                    region,
                    x,
                    y,
                    n: report.rows_in(region).count(),
                    r,
                    reason,
                });
            }
        }
        emit(CORRELATION_JSON, to_json(&entries)?)?;
    }
    run.finish(&args.out)?;
    Ok(report)
}
