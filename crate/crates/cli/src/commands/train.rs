use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use voxcycle::data::manifest::DatasetManifest;
use voxcycle::training::{
    evaluate_held_out, fine_tune, train, write_loss_csv, Checkpoint, CycleModels, EpochLog, HeldOutStats, NamedVolume,
    TrainConfig, TrainEvent,
};

use super::parse_extents;
use crate::error::{CliError, Result};
use crate::io::{load, to_json, to_model_tensor, write_text, Domain};
use crate::run::{create_dir, RunRecorder};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_CSV: &str = "losses.csv";
pub const HELD_OUT_JSON: &str = "heldout.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size networks on a 128x128x64 grid.
    Full,
    /// Base width 8 on a 32x32x16 grid.
    Desk,
}

/// Flags that replace values from the config file or preset.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub decay_start: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_cycle: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta_corcoe: Option<f64>,
    #[arg(long)]
    pub base_width: Option<usize>,
    #[arg(long)]
    pub res_blocks: Option<usize>,
    #[arg(long)]
    pub disc_width: Option<usize>,
    /// Model grid as D,H,W.
    #[arg(long, value_parser = parse_extents)]
    pub shape: Option<[usize; 3]>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set! {
            epochs => cfg.epochs,
            decay_start => cfg.decay_start_epoch,
            lr => cfg.lr,
            seed => cfg.seed,
            batch_size => cfg.batch_size,
            pool_size => cfg.pool_size,
            lambda_cycle => cfg.loss_weights.lambda_cycle,
            beta_corcoe => cfg.loss_weights.beta_corcoe,
            base_width => cfg.base_width,
            res_blocks => cfg.n_res_blocks,
            disc_width => cfg.disc_base_width,
            shape => cfg.volume_shape,
            checkpoint_interval => cfg.checkpoint_interval,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset manifest; `t1` volumes form domain X, `fa` volumes domain Y.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training config; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base values when no config file is given.
    #[arg(long, value_enum, default_value = "full")]
    pub preset: Preset,
    /// Continue a checkpoint's schedule and optimizer state.
    #[arg(long, conflicts_with = "transfer_from")]
    pub resume: Option<PathBuf>,
    /// Fine-tune pretrained networks from epoch 0 with fresh optimizer state.
    #[arg(long)]
    pub transfer_from: Option<PathBuf>,
    /// Keep the last N manifest cases out of training and report cycle error
    /// and correlation on them before and after.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutValues {
    pub cycle: f64,
    pub pearson_gx_x: f64,
    pub pearson_fy_y: f64,
}

impl From<HeldOutStats> for HeldOutValues {
    fn from(s: HeldOutStats) -> Self {
        HeldOutValues {
            cycle: s.cycle,
            pearson_gx_x: s.pearson_gx_x,
            pearson_fy_y: s.pearson_fy_y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub cases: Vec<String>,
    pub initial: HeldOutValues,
    #[serde(rename = "final")]
    pub after: HeldOutValues,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub log: Vec<EpochLog>,
    pub final_checkpoint: PathBuf,
    pub held_out: Option<HeldOutReport>,
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    TrainConfig::from_json(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Config file, else the checkpoint's own config, else the preset; then flags.
pub fn resolve_config(args: &TrainArgs, ckpt: Option<&Checkpoint>) -> Result<TrainConfig> {
    let mut cfg = match (&args.config, ckpt) {
        (Some(p), _) => read_config(p)?,
        (None, Some(c)) => c.config.clone(),
        (None, None) => match args.preset {
            Preset::Full => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        },
    };
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

struct Split {
    x: Vec<NamedVolume>,
    y: Vec<NamedVolume>,
    held_x: Vec<NamedVolume>,
    held_y: Vec<NamedVolume>,
}

fn load_split(manifest_path: &Path, holdout: usize, cfg: &TrainConfig) -> Result<Split> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let n = manifest.entries.len();
    if holdout >= n {
        return Err(CliError::Usage(format!(
            "--holdout {holdout} leaves no training cases out of {n}"
        )));
    }
    let mut split = Split {
        x: Vec::new(),
        y: Vec::new(),
        held_x: Vec::new(),
        held_y: Vec::new(),
    };
    for (i, e) in manifest.entries.iter().enumerate() {
        let named = |p: &Path, domain| -> Result<NamedVolume> {
            let v = load(&manifest.resolve(p))?;
            if v.channels() != cfg.channels {
                return Err(CliError::Data(format!(
                    "{}: {} channels, config expects {}",
                    p.display(),
                    v.channels(),
                    cfg.channels
                )));
            }
            Ok(NamedVolume {
                id: e.id.clone(),
                data: to_model_tensor(&v, cfg.volume_shape, domain)?,
            })
        };
        let (xs, ys) = if i < n - holdout {
            (&mut split.x, &mut split.y)
        } else {
            (&mut split.held_x, &mut split.held_y)
        };
        xs.push(named(&e.t1, Domain::X)?);
        ys.push(named(&e.fa, Domain::Y)?);
    }
    Ok(split)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    let pretrained = args.transfer_from.as_deref().map(Checkpoint::load).transpose()?;
    let cfg = resolve_config(args, resume.as_ref().or(pretrained.as_ref()))?;
    let split = load_split(&args.data, args.holdout, &cfg)?;

    let mut run = RunRecorder::new(
        "train",
        &serde_json::json!({ "args": args, "train_config": &cfg }),
        Some(cfg.seed),
    )?;
    run.input(&args.data);
    for p in [&args.config, &args.resume, &args.transfer_from].into_iter().flatten() {
        run.input(p);
    }
    let out = &args.out;
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;

    let initial_models = match (&resume, &pretrained) {
        (Some(c), _) | (None, Some(c)) => c.models.clone(),
        (None, None) => CycleModels::build(&cfg)?,
    };
    let held_initial = (args.holdout > 0)
        .then(|| evaluate_held_out(&initial_models, &split.held_x, &split.held_y))
        .transpose()?;
    drop(initial_models);

    let final_path = out.join(FINAL_CHECKPOINT);
    let mut written = Vec::new();
    let mut sink = |ev: TrainEvent| -> voxcycle::Result<()> {
        match ev {
            TrainEvent::Step { .. } => {}
            TrainEvent::Epoch(e) => {
                if !args.quiet {
                    eprintln!(
                        "epoch {:>4}  lr {:.3e}  total {:.4}  cycle {:.4}  corcoe {:.4}  d_x {:.4}  d_y {:.4}",
                        e.epoch, e.lr, e.losses.total, e.losses.cycle, e.losses.corcoe, e.losses.d_x, e.losses.d_y
                    );
                }
            }
            TrainEvent::Checkpoint { checkpoint, last } => {
                let p = if last {
                    final_path.clone()
                } else {
                    ckpt_dir.join(format!("epoch_{:04}.ckpt", checkpoint.epoch))
                };
                checkpoint.save(&p)?;
                written.push(p);
            }
        }
        Ok(())
    };
    let outcome = match pretrained {
        Some(p) => fine_tune(&p, &split.x, &split.y, &cfg, &mut sink)?,
        None => train(&split.x, &split.y, &cfg, resume, &mut sink)?,
    };
    if !written.contains(&final_path) {
        outcome.checkpoint.save(&final_path)?;
        written.push(final_path.clone());
    }
    for p in written {
        run.output(p);
    }

    let mut csv = Vec::new();
    write_loss_csv(&outcome.log, &mut csv).map_err(|e| CliError::io(out.join(LOSS_CSV), e))?;
    let csv_path = out.join(LOSS_CSV);
    std::fs::write(&csv_path, csv).map_err(|e| CliError::io(&csv_path, e))?;
    run.output(&csv_path);

    let held_out = match held_initial {
        Some(initial) => {
            let after = evaluate_held_out(&outcome.checkpoint.models, &split.held_x, &split.held_y)?;
            let report = HeldOutReport {
                cases: split.held_x.iter().map(|v| v.id.clone()).collect(),
                initial: initial.into(),
                after: after.into(),
            };
            let p = out.join(HELD_OUT_JSON);
            write_text(&p, &to_json(&report)?)?;
            run.output(p);
            Some(report)
        }
        None => None,
    };
    run.finish(out)?;
    Ok(TrainSummary {
        config: cfg,
        log: outcome.log,
        final_checkpoint: final_path,
        held_out,
    })
}
