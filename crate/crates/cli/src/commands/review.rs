//! Blind real-vs-synthetic review sessions. The session manifest lists
//! anonymous items only; which item is real lives in `key.json`, which the
//! viewer never reads.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use voxcycle::data::Volume;

use crate::error::{CliError, Result};
use crate::io::{load, match_cases, to_json, write_text};
use crate::pgm::{window_to_u8, write_pgm, Gray8};
use crate::run::{create_dir, write_atomic, RunRecorder};
use crate::stats::binomial_two_sided;

pub const MANIFEST_VERSION: u32 = 1;
pub const SESSION_MANIFEST: &str = "manifest.json";
pub const KEY_FILE: &str = "key.json";
pub const SCHEMA_FILE: &str = "results.schema.json";
pub const GRADE_JSON: &str = "grade.json";
pub const RESULTS_SCHEMA: &str = include_str!("../../schema/results.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    /// Fixed third axis.
    Axial,
    /// Fixed second axis.
    Coronal,
    /// Fixed first axis.
    Sagittal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SliceSpec {
    pub plane: Plane,
    pub indices: Vec<usize>,
}

impl FromStr for SliceSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("`{s}`: expected plane:k1,k2 with plane axial, coronal or sagittal");
        let (plane, list) = s.split_once(':').ok_or_else(bad)?;
        let plane = match plane {
            "axial" => Plane::Axial,
            "coronal" => Plane::Coronal,
            "sagittal" => Plane::Sagittal,
            _ => return Err(bad()),
        };
        let indices = list
            .split(',')
            .map(|k| k.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(SliceSpec { plane, indices })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayHints {
    pub window: f64,
    pub level: f64,
}

const DEFAULT_DISPLAY: DisplayHints = DisplayHints {
    window: 255.0,
    level: 127.5,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    /// Relative to the session directory.
    pub image_path: String,
    pub width: usize,
    pub height: usize,
    pub display: DisplayHints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewManifest {
    pub version: u32,
    pub session_id: String,
    pub display: DisplayHints,
    pub items: Vec<ReviewItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyItem {
    pub item_id: String,
    pub truth: Choice,
    pub case: String,
    pub plane: Plane,
    pub slice: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFile {
    pub version: u32,
    pub session_id: String,
    pub items: Vec<KeyItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Judgment {
    pub item_id: String,
    pub choice: Choice,
    /// 1 to 5; recorded, not scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewResults {
    pub session_id: String,
    pub rater_id: String,
    pub judgments: Vec<Judgment>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportReviewArgs {
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Slices to export, e.g. axial:8,10. Repeatable.
    #[arg(long, required = true)]
    pub slices: Vec<SliceSpec>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// `(width, height, slice count)` for a plane.
fn slice_dims(ext: [usize; 3], plane: Plane) -> (usize, usize, usize) {
    let [d, h, w] = ext;
    match plane {
        Plane::Axial => (d, h, w),
        Plane::Coronal => (d, w, h),
        Plane::Sagittal => (h, w, d),
    }
}

/// Channel-averaged slice, first volume axis across and the other in-plane
/// axis up the image.
pub fn slice_image(v: &Volume, plane: Plane, k: usize) -> Result<Gray8> {
    let (width, height, depth) = slice_dims(v.extents(), plane);
    if k >= depth {
        return Err(CliError::Data(format!(
            "{plane:?} slice {k} out of range (extent {depth})"
        )));
    }
    let mut values = Vec::with_capacity(width * height);
    for row in 0..height {
        let r = height - 1 - row;
        for col in 0..width {
            let (d, h, w) = match plane {
                Plane::Axial => (col, r, k),
                Plane::Coronal => (col, k, r),
                Plane::Sagittal => (k, col, r),
            };
            let idx = v.index(d, h, w);
            let s: f64 = (0..v.channels()).map(|c| v.channel(c)[idx] as f64).sum();
            values.push(s / v.channels() as f64);
        }
    }
    Ok(Gray8 {
        width,
        height,
        pixels: window_to_u8(&values),
    })
}

struct Pending {
    truth: Choice,
    case: String,
    plane: Plane,
    slice: usize,
    image: Gray8,
}

pub fn cmd_export_review(args: &ExportReviewArgs) -> Result<ReviewManifest> {
    let cases = match_cases(&args.gen, &args.gt)?;
    let mut run = RunRecorder::new("export-review", args, Some(args.seed))?;
    let mut pending = Vec::new();
    for (id, gp, tp) in &cases {
        run.input(gp);
        run.input(tp);
        let gen = load(gp)?;
        let gt = load(tp)?;
        if gen.extents() != gt.extents() {
            return Err(CliError::Data(format!(
                "case `{id}`: generated {:?} vs ground truth {:?}",
                gen.extents(),
                gt.extents()
            )));
        }
        for spec in &args.slices {
            for &k in &spec.indices {
                for (truth, v) in [(Choice::Real, &gt), (Choice::Synthetic, &gen)] {
                    let image =
                        slice_image(v, spec.plane, k).map_err(|e| CliError::Data(format!("case `{id}`: {e}")))?;
                    pending.push(Pending {
                        truth,
                        case: id.clone(),
                        plane: spec.plane,
                        slice: k,
                        image,
                    });
                }
            }
        }
    }
    pending.shuffle(&mut ChaCha8Rng::seed_from_u64(args.seed));

    let out = &args.out;
    create_dir(&out.join("images"))?;
    let session_id = format!("session-{:016x}", args.seed);
    let mut items = Vec::with_capacity(pending.len());
    let mut key = Vec::with_capacity(pending.len());
    for (i, p) in pending.into_iter().enumerate() {
        let item_id = format!("item{:04}", i + 1);
        let image_path = format!("images/{item_id}.pgm");
        let path = out.join(&image_path);
        std::fs::write(&path, write_pgm(&p.image)).map_err(|e| CliError::io(&path, e))?;
        run.output(path);
        items.push(ReviewItem {
            item_id: item_id.clone(),
            image_path,
            width: p.image.width,
            height: p.image.height,
            display: DEFAULT_DISPLAY,
        });
        key.push(KeyItem {
            item_id,
            truth: p.truth,
            case: p.case,
            plane: p.plane,
            slice: p.slice,
        });
    }
    let manifest = ReviewManifest {
        version: MANIFEST_VERSION,
        session_id: session_id.clone(),
        display: DEFAULT_DISPLAY,
        items,
    };
    let keyfile = KeyFile {
        version: MANIFEST_VERSION,
        session_id,
        items: key,
    };
    for (name, text) in [
        (SESSION_MANIFEST, to_json(&manifest)?),
        (KEY_FILE, to_json(&keyfile)?),
        (SCHEMA_FILE, RESULTS_SCHEMA.to_string()),
    ] {
        let p = out.join(name);
        write_atomic(&p, text.as_bytes())?;
        run.output(p);
    }
    run.finish(out)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradeReviewArgs {
    /// Session directory holding `key.json`.
    #[arg(long)]
    pub session: PathBuf,
    /// Results JSON exported by the review tool.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub real_as_real: usize,
    pub real_as_synthetic: usize,
    pub synthetic_as_real: usize,
    pub synthetic_as_synthetic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub session_id: String,
    pub rater_id: String,
    pub items: usize,
    pub judged: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub confusion: Confusion,
    /// Exact two-sided binomial test of `correct` out of `judged` against 0.5.
    pub p_value: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn grade(key: &KeyFile, results: &ReviewResults) -> Result<GradeReport> {
    if key.session_id != results.session_id {
        return Err(CliError::Data(format!(
            "results are for session `{}`, key is for `{}`",
            results.session_id, key.session_id
        )));
    }
    let truth: HashMap<&str, Choice> = key.items.iter().map(|k| (k.item_id.as_str(), k.truth)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut confusion = Confusion::default();
    for j in &results.judgments {
        let Some(&t) = truth.get(j.item_id.as_str()) else {
            return Err(CliError::Data(format!("unknown item id `{}`", j.item_id)));
        };
        if !seen.insert(j.item_id.as_str()) {
            return Err(CliError::Data(format!("duplicate judgment for `{}`", j.item_id)));
        }
        if let Some(c) = j.confidence {
            if !(1..=5).contains(&c) {
                return Err(CliError::Data(format!(
                    "item `{}`: confidence {c} outside 1..=5",
                    j.item_id
                )));
            }
        }
        match (t, j.choice) {
            (Choice::Real, Choice::Real) => confusion.real_as_real += 1,
            (Choice::Real, Choice::Synthetic) => confusion.real_as_synthetic += 1,
            (Choice::Synthetic, Choice::Real) => confusion.synthetic_as_real += 1,
            (Choice::Synthetic, Choice::Synthetic) => confusion.synthetic_as_synthetic += 1,
        }
    }
    let judged = results.judgments.len();
    let correct = confusion.real_as_real + confusion.synthetic_as_synthetic;
    Ok(GradeReport {
        session_id: results.session_id.clone(),
        rater_id: results.rater_id.clone(),
        items: key.items.len(),
        judged,
        correct,
        accuracy: if judged > 0 {
            correct as f64 / judged as f64
        } else {
            0.0
        },
        confusion,
        p_value: binomial_two_sided(correct, judged),
    })
}

pub fn cmd_grade_review(args: &GradeReviewArgs) -> Result<GradeReport> {
    let key_path = args.session.join(KEY_FILE);
    let key: KeyFile = read_json(&key_path)?;
    let results: ReviewResults = read_json(&args.results)?;
    let report = grade(&key, &results)?;
    let mut run = RunRecorder::new("grade-review", args, None)?;
    run.input(&key_path);
    run.input(&args.results);
    create_dir(&args.out)?;
    let p = args.out.join(GRADE_JSON);
    write_text(&p, &to_json(&report)?)?;
    run.output(p);
    run.finish(&args.out)?;
    Ok(report)
}
