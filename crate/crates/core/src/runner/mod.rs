//! Experiment orchestration: configuration, the training loop, the
//! learning-rate schedule, pruning dispatch and artifact output.

mod config;
mod experiment;
mod schedule;
mod train;

pub use config::{
    AnnotatorSplit, AugmentOverrides, ClassPattern, DatasetConfig, ExperimentConfig, FabricConfig, GradientSource,
    NoiseConfig, PruningConfig, ScheduleConfig, SplitConfig,
};
pub use experiment::{
    initial_fabric, inject_noise, prepare_data, run_experiment, run_prepared, AnnotatorSummary, EpochRecord,
    NoisyLabels, PreparedData, RunSummary, SPLIT_NAMES,
};
pub use schedule::{lr_at, scale_epoch, scale_schedule, ScaledSchedule, REFERENCE_EPOCHS, REFERENCE_MILESTONES};
pub use train::{
    batch_ranges, error_rate, eval_batches, evaluate, mix_seed, prepare_eval_images, stack, train_epoch, TrainSettings,
};
