//! The epoch loop: train, validate, feed the valley tracker, stop when the
//! valley ends, and keep the best-validation-accuracy checkpoint on the side.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tracker::{TrackerEvent, ValleyTracker};
use super::valley::{LossTrace, ValleyConfig};
use crate::error::Result;
use crate::losses::LossBreakdown;
use crate::model::ParamVector;

/// Smallest validation loss handed to the tracker; the checkpoint weight
/// divides by it.
pub const MIN_TRACKED_LOSS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Batch-averaged loss components for the epoch.
    pub loss: LossBreakdown,
    pub batches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    /// Plain (unsmoothed) cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
}

/// Anything the driver can train one epoch at a time.
pub trait EpochModel {
    /// Runs one pass over the training batches of 1-based `epoch`.
    fn train_epoch(&mut self, epoch: usize) -> Result<TrainStats>;
    fn validate(&mut self) -> Result<Validation>;
    fn params(&self) -> &ParamVector;
}

/// Which checkpoint a run hands back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// The valley-weighted average θ*.
    ValleyEnsemble,
    /// The single epoch with the highest validation accuracy.
    BestValAccuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValleyStatus {
    /// The overfit window triggered a stop.
    Stopped,
    /// Converged, but the epoch budget ran out before overfitting.
    BudgetExhausted,
    /// Never converged within the budget.
    NoValley,
}

/// One line of the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub tracker: TrackerEvent,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub trace: LossTrace,
    pub val_accuracy: Vec<f64>,
    pub status: ValleyStatus,
    pub converge_epoch: Option<usize>,
    pub threshold: Option<f64>,
    pub overfit_epoch: Option<usize>,
    pub stop_epoch: Option<usize>,
    pub merged_epochs: Vec<usize>,
    pub merged: Option<ParamVector>,
    pub best: ParamVector,
    pub best_epoch: usize,
    pub best_accuracy: f64,
}

impl TrainingOutcome {
    pub fn epochs_run(&self) -> usize {
        self.trace.len()
    }

    /// Returns the requested checkpoint and whether the best-accuracy
    /// fallback replaced a missing ensemble.
    pub fn select(&self, selection: Selection) -> (&ParamVector, bool) {
        match (selection, &self.merged) {
            (Selection::ValleyEnsemble, Some(m)) => (m, false),
            (Selection::ValleyEnsemble, None) => (&self.best, true),
            (Selection::BestValAccuracy, _) => (&self.best, false),
        }
    }
}

/// Runs the online valley procedure for at most `cfg.max_epochs` epochs.
///
/// Every epoch trains, validates, pushes the snapshot into both windows and
/// reacts: stop on a sustained excess over γ, bulk-merge at convergence,
/// otherwise merge the oldest overfit-window entry. `sink` receives one
/// record per epoch.
pub fn run_training<M: EpochModel + ?Sized>(
    model: &mut M,
    cfg: &ValleyConfig,
    sink: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainingOutcome> {
    let mut tracker = ValleyTracker::new(*cfg)?;
    let mut losses = Vec::with_capacity(cfg.max_epochs);
    let mut accuracies = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, f64, ParamVector)> = None;

    for epoch in 1..=cfg.max_epochs {
        let stats = model.train_epoch(epoch)?;
        let val = model.validate()?;
        let loss = val.loss.max(MIN_TRACKED_LOSS);
        losses.push(loss);
        accuracies.push(val.accuracy);
        if best.as_ref().is_none_or(|(_, acc, _)| val.accuracy > *acc) {
            best = Some((epoch, val.accuracy, model.params().clone()));
        }
        let event = tracker.observe(epoch, Arc::new(model.params().clone()), loss)?;
        match &event {
            TrackerEvent::Converged { converge_epoch, threshold, .. } => {
                log::debug!("epoch {epoch}: converged at {converge_epoch}, gamma {threshold:.6}")
            }
            TrackerEvent::Stop => log::debug!("epoch {epoch}: overfitting, stopping"),
            _ => {}
        }
        let stop = event == TrackerEvent::Stop;
        sink(&EpochRecord {
            epoch,
            train: stats.loss,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            tracker: event,
        })?;
        if stop {
            break;
        }
    }

    let (best_epoch, best_accuracy, best) = best.expect("max_epochs >= 1 after validation");
    let status = match (tracker.converge_epoch(), tracker.stop_epoch()) {
        (None, _) => ValleyStatus::NoValley,
        (Some(_), Some(_)) => ValleyStatus::Stopped,
        (Some(_), None) => ValleyStatus::BudgetExhausted,
    };
    Ok(TrainingOutcome {
        trace: LossTrace(losses),
        val_accuracy: accuracies,
        status,
        converge_epoch: tracker.converge_epoch(),
        threshold: tracker.threshold(),
        overfit_epoch: tracker.overfit_epoch(),
        stop_epoch: tracker.stop_epoch(),
        merged_epochs: tracker.merged_epochs().to_vec(),
        merged: tracker.into_merged(),
        best,
        best_epoch,
        best_accuracy,
    })
}
