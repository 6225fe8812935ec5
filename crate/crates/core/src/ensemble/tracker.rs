//! Online state machine that detects the valley and merges checkpoints as
//! epochs arrive.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;

use super::valley::{log_checkpoint_weight, ValleyConfig};
use crate::error::{Error, Result};
use crate::model::ParamVector;

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub epoch: usize,
    pub params: Arc<ParamVector>,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerStatus {
    Warming,
    Converged,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrackerEvent {
    None,
    Converged {
        converge_epoch: usize,
        threshold: f64,
        merged: Vec<usize>,
    },
    Merged {
        epoch: usize,
    },
    Stop,
}

/// Runtime state for valley detection and online merging.
///
/// The two windows share snapshots through `Arc`, so at most `N_s` distinct
/// parameter vectors are alive besides the merged model.
#[derive(Debug, Clone)]
pub struct ValleyTracker {
    cfg: ValleyConfig,
    converge_queue: VecDeque<Snapshot>,
    overfit_queue: VecDeque<Snapshot>,
    converge_epoch: Option<usize>,
    converge_loss: f64,
    threshold: Option<f64>,
    merged: Option<ParamVector>,
    /// `ln(w_cum)`; −∞ before the first merge.
    log_weight_sum: f64,
    merged_epochs: Vec<usize>,
    status: TrackerStatus,
    stop_epoch: Option<usize>,
}

impl ValleyTracker {
    pub fn new(cfg: ValleyConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ValleyTracker {
            cfg,
            converge_queue: VecDeque::with_capacity(cfg.converge_patience),
            overfit_queue: VecDeque::with_capacity(cfg.overfit_patience),
            converge_epoch: None,
            converge_loss: 0.0,
            threshold: None,
            merged: None,
            log_weight_sum: f64::NEG_INFINITY,
            merged_epochs: Vec::new(),
            status: TrackerStatus::Warming,
            stop_epoch: None,
        })
    }

    pub fn config(&self) -> &ValleyConfig {
        &self.cfg
    }

    pub fn status(&self) -> TrackerStatus {
        self.status
    }

    pub fn converge_epoch(&self) -> Option<usize> {
        self.converge_epoch
    }

    pub fn converge_loss(&self) -> Option<f64> {
        self.converge_epoch.map(|_| self.converge_loss)
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn stop_epoch(&self) -> Option<usize> {
        self.stop_epoch
    }

    /// First epoch of the over-threshold window that stopped the run.
    pub fn overfit_epoch(&self) -> Option<usize> {
        self.stop_epoch.map(|s| s + 1 - self.cfg.overfit_patience)
    }

    pub fn merged(&self) -> Option<&ParamVector> {
        self.merged.as_ref()
    }

    pub fn into_merged(self) -> Option<ParamVector> {
        self.merged
    }

    pub fn merged_epochs(&self) -> &[usize] {
        &self.merged_epochs
    }

    /// Cumulative unnormalized (stabilized) weight; 0 before any merge.
    pub fn weight_sum(&self) -> f64 {
        self.log_weight_sum.exp()
    }

    /// Number of distinct parameter snapshots held by the windows.
    pub fn retained_snapshots(&self) -> usize {
        let mut ptrs: Vec<*const ParamVector> = self
            .converge_queue
            .iter()
            .chain(&self.overfit_queue)
            .map(|s| Arc::as_ptr(&s.params))
            .collect();
        ptrs.sort();
        ptrs.dedup();
        ptrs.len()
    }

    /// Folds one checkpoint into the running weighted average:
    /// `β = w/(w_cum + w)`, `θ* ← (1 − β)θ* + βθ`, `w_cum ← w_cum + w`.
    /// Weights are combined in log space so neither sum can overflow.
    pub fn merge_online(&mut self, snapshot: &Snapshot) -> Result<()> {
        let log_w = log_checkpoint_weight(self.converge_loss, snapshot.loss, self.cfg.temperature)?;
        match self.merged.as_mut() {
            None => {
                self.merged = Some((*snapshot.params).clone());
                self.log_weight_sum = log_w;
            }
            Some(merged) => {
                let beta = 1.0 / (1.0 + (self.log_weight_sum - log_w).exp());
                merged.lerp_towards(&snapshot.params, beta)?;
                let hi = self.log_weight_sum.max(log_w);
                let lo = self.log_weight_sum.min(log_w);
                self.log_weight_sum = hi + (lo - hi).exp().ln_1p();
            }
        }
        self.merged_epochs.push(snapshot.epoch);
        Ok(())
    }

    /// Feeds the model state after `epoch` with its validation loss. Epochs
    /// must arrive in order starting at 1.
    pub fn observe(&mut self, epoch: usize, params: Arc<ParamVector>, loss: f64) -> Result<TrackerEvent> {
        if self.status == TrackerStatus::Stopped {
            return Err(Error::InvalidArgument("tracker already stopped".into()));
        }
        if !(loss.is_finite() && loss > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "validation loss must be positive and finite, got {loss}"
            )));
        }
        let snap = Snapshot { epoch, params, loss };
        if self.converge_queue.len() == self.cfg.converge_patience {
            self.converge_queue.pop_front();
        }
        self.converge_queue.push_back(snap.clone());
        if self.overfit_queue.len() == self.cfg.overfit_patience {
            self.overfit_queue.pop_front();
        }
        self.overfit_queue.push_back(snap);

        if let Some(gamma) = self.threshold {
            if self.overfit_queue.iter().all(|s| s.loss > gamma) {
                self.status = TrackerStatus::Stopped;
                self.stop_epoch = Some(epoch);
                return Ok(TrackerEvent::Stop);
            }
        }

        if self.converge_epoch.is_none() {
            let full = self.converge_queue.len() == self.cfg.converge_patience;
            let head = self.converge_queue.front().expect("just pushed").loss;
            if full && self.converge_queue.iter().all(|s| head <= s.loss) {
                let head_epoch = self.converge_queue[0].epoch;
                self.converge_epoch = Some(head_epoch);
                self.converge_loss = head;
                let mean = self.converge_queue.iter().map(|s| s.loss).sum::<f64>()
                    / self.cfg.converge_patience as f64;
                let gamma = self.cfg.tolerance * mean;
                self.threshold = Some(gamma);
                self.status = TrackerStatus::Converged;
                let bulk: Vec<Snapshot> = self
                    .converge_queue
                    .iter()
                    .take(self.cfg.converge_patience - self.cfg.overfit_patience)
                    .cloned()
                    .collect();
                let start = self.merged_epochs.len();
                for s in &bulk {
                    self.merge_online(s)?;
                }
                return Ok(TrackerEvent::Converged {
                    converge_epoch: head_epoch,
                    threshold: gamma,
                    merged: self.merged_epochs[start..].to_vec(),
                });
            }
            return Ok(TrackerEvent::None);
        }

        let head = self.overfit_queue.pop_front().expect("queue holds the new snapshot");
        self.merge_online(&head)?;
        Ok(TrackerEvent::Merged { epoch: head.epoch })
    }
}
