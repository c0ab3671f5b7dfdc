use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use voxcycle::data::manifest::DatasetManifest;
use voxcycle::data::{normalize, resize_trilinear, save_volume, Direction, Volume};
use voxcycle::training::{generate, Checkpoint};

use crate::error::{CliError, Result};
use crate::io::{load, prepare, Domain};
use crate::run::{create_dir, RunRecorder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum GeneratorChoice {
    /// `G: X -> Y`, T1-like to FA-like.
    G,
    /// `F: Y -> X`, FA-like to T1-like.
    F,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "g")]
    pub direction: GeneratorChoice,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset manifest; uses `t1` volumes for `g` and `fa` volumes for `f`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Resample outputs back onto each input's grid.
    #[arg(long)]
    pub restore_shape: bool,
    /// Individual volumes, named by file stem.
    pub inputs: Vec<PathBuf>,
}

fn collect_inputs(args: &InferArgs) -> Result<Vec<(String, PathBuf)>> {
    let mut items = Vec::new();
    if let Some(m) = &args.data {
        let manifest = DatasetManifest::load(m)?;
        for e in &manifest.entries {
            let p = match args.direction {
                GeneratorChoice::G => &e.t1,
                GeneratorChoice::F => &e.fa,
            };
            items.push((e.id.clone(), manifest.resolve(p)));
        }
    }
    for p in &args.inputs {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Usage(format!("{}: cannot name output", p.display())))?;
        items.push((id.to_string(), p.clone()));
    }
    if items.is_empty() {
        return Err(CliError::Usage("no inputs: pass --data or volume paths".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for (id, _) in &items {
        if !seen.insert(id.as_str()) {
            return Err(CliError::Data(format!("two inputs would both write `{id}.nii`")));
        }
    }
    Ok(items)
}

fn translate(ckpt: &Checkpoint, dir: GeneratorChoice, input: &Volume, restore: bool, path: &Path) -> Result<Volume> {
    let cfg = &ckpt.config;
    if input.channels() != cfg.channels {
        return Err(CliError::Data(format!(
            "{}: {} channels but the checkpoint was trained on {}",
            path.display(),
            input.channels(),
            cfg.channels
        )));
    }
    let (net, domain) = match dir {
        GeneratorChoice::G => (&ckpt.models.g, Domain::X),
        GeneratorChoice::F => (&ckpt.models.f, Domain::Y),
    };
    let model_in = prepare(input, cfg.volume_shape, domain)?;
    let y = generate(net, &model_in.to_tensor())?;
    let physical = normalize(&Volume::from_tensor(&y, &model_in)?, Direction::ToPhysical)?;
    if restore && physical.extents() != input.extents() {
        let back = resize_trilinear(&physical, input.extents())?.map(|v| v.clamp(0.0, 1.0));
        Ok(back.with_spacing(input.spacing())?.with_affine(input.affine()))
    } else {
        Ok(physical)
    }
}

/// One `<id>.nii` per input, in `[0, 1]`. Returns the written paths.
pub fn cmd_infer(args: &InferArgs) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let items = collect_inputs(args)?;
    let mut run = RunRecorder::new("infer", args, Some(ckpt.config.seed))?;
    run.input(&args.checkpoint);
    create_dir(&args.out)?;
    let mut written = Vec::with_capacity(items.len());
    for (id, path) in &items {
        run.input(path);
        let v = load(path)?;
        let out = translate(&ckpt, args.direction, &v, args.restore_shape, path)?;
        let p = args.out.join(format!("{id}.nii"));
        save_volume(&p, &out)?;
        run.output(&p);
        written.push(p);
    }
    run.finish(&args.out)?;
    Ok(written)
}
