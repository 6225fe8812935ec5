//! Flat-valley detection on the validation-loss trace and online weighted
//! checkpoint averaging.

mod driver;
mod tracker;
mod valley;

pub use driver::{run_training, EpochModel, EpochRecord, Selection, TrainStats, TrainingOutcome, ValleyStatus, Validation};
pub use tracker::{Snapshot, TrackerEvent, TrackerStatus, ValleyTracker};
pub use valley::{
    checkpoint_weight, find_converge_epoch, find_overfit_epoch, log_checkpoint_weight,
    normalized_weights, overfit_threshold, LossTrace, ValleyConfig,
};
