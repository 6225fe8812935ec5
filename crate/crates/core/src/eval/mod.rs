//! Experiment harness: folds, metrics, divergence diagnostics and reports.

pub mod experiment;
pub mod folds;
pub mod jsd;
pub mod metrics;
pub mod render;

pub use experiment::{
    run_experiment, DiagnosticRecord, EvalReport, FoldResult, ModeReport, SeedRun, Trajectory,
};
pub use folds::{make_cross_domain_folds, make_iid_split, Fold, FoldPlan, IidSplit, SampleRef};
pub use jsd::jsd_divergence;
pub use metrics::{compute_metrics, mean_std, ClassCounts, ConfusionCounts, Metrics};
pub use render::render_report;
