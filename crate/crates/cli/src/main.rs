use std::process::ExitCode;

use clap::{Parser, Subcommand};
use voxcycle_cli::*;

#[derive(Parser)]
#[command(
    name = "voxcycle",
    version,
    about = "3D CycleGAN training and evaluation for volumetric MRI"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic T1/FA phantom dataset.
    Phantom(PhantomArgs),
    /// Train, resume or fine-tune a cycle model.
    Train(TrainArgs),
    /// Translate volumes with one generator of a checkpoint.
    Infer(InferArgs),
    /// SSIM, MS-SSIM and PSNR per case and region.
    Evaluate(EvaluateArgs),
    /// Case-wise differences between two evaluation reports.
    Compare(CompareArgs),
    /// Export a blind real-vs-synthetic review session.
    ExportReview(ExportReviewArgs),
    /// Score review results against the session key.
    GradeReview(GradeReviewArgs),
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom(a) => {
            let p = cmd_phantom(&a)?;
            println!("{}", p.display());
        }
        Command::Train(a) => {
            let s = cmd_train(&a)?;
            println!("{}", s.final_checkpoint.display());
        }
        Command::Infer(a) => {
            for p in cmd_infer(&a)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate(a) => {
            let r = cmd_evaluate(&a)?;
            println!("{} rows", r.rows.len());
        }
        Command::Compare(a) => {
            let d = cmd_compare(&a)?;
            println!("{} deltas", d.deltas.len());
        }
        Command::ExportReview(a) => {
            let m = cmd_export_review(&a)?;
            println!("{} items", m.items.len());
        }
        Command::GradeReview(a) => {
            let g = cmd_grade_review(&a)?;
            println!(
                "accuracy {:.4} ({}/{}), p = {:.6}",
                g.accuracy, g.correct, g.judged, g.p_value
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(v) = std::env::var("VOXCYCLE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = voxcore::parallel::init_threads(n) {
                    eprintln!("voxcycle: VOXCYCLE_THREADS: {e}");
                }
            }
            _ => {
                eprintln!("voxcycle: VOXCYCLE_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(1);
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("voxcycle: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
