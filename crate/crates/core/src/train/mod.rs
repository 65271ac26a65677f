//! Normalization, patch sampling, initialization, Adam and the training loop.

mod config;
mod init;
mod normalize;
mod optim;
mod patch;
mod trainer;

pub use config::{load_config, parse_config, DecayStyle, RunConfig, TrainConfig};
pub use init::he_init;
pub use normalize::{normalize_volume, MIN_STD};
pub use optim::{adam_step, adam_update, lr_at, OptimState};
pub use patch::{crop, patch_at, sample_patch, Patch};
pub use trainer::{
    normalize_sample, trace_csv, train, train_step, train_with, TrainEvent, TrainOutcome, TraceRow,
};
