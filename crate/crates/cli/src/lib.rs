//! Command implementations behind the `voxcycle` binary. Each `cmd_*`
//! function takes its parsed arguments, writes its artifacts plus a
//! `run.json` record into the output directory, and returns a summary.

pub mod commands;
pub mod error;
pub mod io;
pub mod pgm;
pub mod run;
pub mod stats;

pub use commands::compare::{cmd_compare, CompareArgs};
pub use commands::evaluate::{cmd_evaluate, EvaluateArgs, MetricPair};
pub use commands::infer::{cmd_infer, GeneratorChoice, InferArgs};
pub use commands::phantom::{cmd_phantom, PhantomArgs};
pub use commands::review::{
    cmd_export_review, cmd_grade_review, Choice, ExportReviewArgs, GradeReport, GradeReviewArgs, Judgment, KeyFile,
    Plane, ReviewManifest, ReviewResults, SliceSpec, RESULTS_SCHEMA,
};
pub use commands::train::{cmd_train, HeldOutReport, Preset, TrainArgs, TrainOverrides, TrainSummary};
pub use error::{CliError, Result};
pub use run::{RunManifest, RUN_MANIFEST};
