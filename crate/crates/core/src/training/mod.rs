//! Adam, the learning-rate schedule, the alternating CycleGAN update,
//! image pools, checkpoints and transfer fine-tuning.

mod adam;
pub mod checkpoint;
mod config;
mod pool;
mod schedule;
mod step;
mod trainer;

pub use adam::{AdamParams, AdamState};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use pool::ImagePool;
pub use schedule::lr_at_epoch;
pub use step::{discriminator_objective, generate, train_step, CycleModels, OptStates, Pools};
pub use trainer::{
    evaluate_held_out, fine_tune, read_loss_csv, train, write_loss_csv, EpochLog, HeldOutStats, NamedVolume,
    TrainEvent, TrainOutcome, LOSS_CSV_HEADER,
};
