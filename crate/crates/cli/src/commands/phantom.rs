use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use voxcycle::data::manifest::{DatasetManifest, ManifestEntry};
use voxcycle::data::phantom::{generate_phantoms, LesionSpec, PhantomSpec};
use voxcycle::data::save_volume;

use super::parse_extents;
use crate::error::Result;
use crate::run::{create_dir, RunRecorder};

pub const DATASET_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Args, Serialize)]
pub struct PhantomArgs {
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub cases: usize,
    /// Extents as D,H,W.
    #[arg(long, value_parser = parse_extents, default_value = "32,32,16")]
    pub dim: [usize; 3],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add one spherical lesion per case and write its mask.
    #[arg(long)]
    pub lesion: bool,
    /// Standard deviation of the T1 noise.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f32,
}

/// Writes `t1/`, `fa/` and (with `--lesion`) `mask/` volumes named by case id,
/// plus a dataset manifest. Returns the manifest path.
pub fn cmd_phantom(args: &PhantomArgs) -> Result<PathBuf> {
    let spec = PhantomSpec {
        seed: args.seed,
        n_cases: args.cases,
        extents: args.dim,
        lesion: args.lesion.then(LesionSpec::default),
        noise_sigma: args.noise,
        ..PhantomSpec::default()
    };
    let cases = generate_phantoms(&spec)?;
    let mut run = RunRecorder::new("phantom", &spec, Some(args.seed))?;
    let out = &args.out;
    let mut dirs = vec!["t1", "fa"];
    if args.lesion {
        dirs.push("mask");
    }
    for d in &dirs {
        create_dir(&out.join(d))?;
    }
    let mut entries = Vec::with_capacity(cases.len());
    for c in &cases {
        let rel = |d: &str| Path::new(d).join(format!("{}.nii", c.id));
        let mut write = |rel: &Path, v| -> Result<()> {
            let p = out.join(rel);
            save_volume(&p, v)?;
            run.output(p);
            Ok(())
        };
        write(&rel("t1"), &c.t1)?;
        write(&rel("fa"), &c.fa)?;
        let mask = if args.lesion {
            write(&rel("mask"), &c.mask)?;
            Some(rel("mask"))
        } else {
            None
        };
        entries.push(ManifestEntry {
            id: c.id.clone(),
            t1: rel("t1"),
            fa: rel("fa"),
            mask,
        });
    }
    let manifest_path = out.join(DATASET_MANIFEST);
    DatasetManifest {
        root: out.clone(),
        entries,
    }
    .save(&manifest_path)?;
    run.output(&manifest_path);
    run.finish(out)?;
    Ok(manifest_path)
}
