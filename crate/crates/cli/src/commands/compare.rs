use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use voxcycle::metrics::{paired_diff_report, EvalReport, PairedDiff};

use crate::error::{CliError, Result};
use crate::io::write_text;
use crate::run::{create_dir, RunRecorder};

pub const DELTAS_CSV: &str = "deltas.csv";
pub const HISTOGRAMS_JSON: &str = "histograms.json";

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    /// Minuend `eval.csv`, e.g. the transfer-learning model.
    #[arg(long)]
    pub a: PathBuf,
    /// Subtrahend `eval.csv`, e.g. the directly trained model.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn read_report(p: &PathBuf) -> Result<EvalReport> {
    let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
    EvalReport::from_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

/// Case-wise `a - b` for every metric and region, with histograms.
pub fn cmd_compare(args: &CompareArgs) -> Result<PairedDiff> {
    if args.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let a = read_report(&args.a)?;
    let b = read_report(&args.b)?;
    let diff = paired_diff_report(&a, &b, args.bins)?;
    let mut run = RunRecorder::new("compare", args, None)?;
    run.input(&args.a);
    run.input(&args.b);
    create_dir(&args.out)?;
    let p = args.out.join(DELTAS_CSV);
    write_text(&p, &diff.to_csv())?;
    run.output(p);
    let p = args.out.join(HISTOGRAMS_JSON);
    write_text(&p, &diff.histograms_json()?)?;
    run.output(p);
    run.finish(&args.out)?;
    Ok(diff)
}
