//! SGD fine-tuning of the reference network on domain-balanced batches.

use ndarray::Array2;

use crate::data::batches::{domain_batches, eval_batches, DomainPool};
use crate::data::NormalizedSample;
use crate::ensemble::{EpochModel, TrainStats, Validation};
use crate::error::{Error, Result};
use crate::losses::{smooth_labels, smoothed_cross_entropy, total_loss, LossBreakdown, PairScale};
use crate::model::{backward, forward, sgd_step, ParamVector};

/// Rows per forward pass when evaluating.
pub const EVAL_CHUNK: usize = 512;

/// Objective and optimizer settings for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epsilon: f64,
    pub alpha: f64,
    pub pair_scale: PairScale,
    pub learning_rate: f64,
    pub batch_per_domain: usize,
    /// Seed of the per-epoch batch shuffles.
    pub shuffle_seed: u64,
}

pub struct NetworkTrainer {
    params: ParamVector,
    settings: TrainSettings,
    pools: Vec<DomainPool>,
    validation: Vec<NormalizedSample>,
}

impl NetworkTrainer {
    pub fn new(
        params: ParamVector,
        settings: TrainSettings,
        pools: Vec<DomainPool>,
        validation: Vec<NormalizedSample>,
    ) -> Result<Self> {
        if validation.is_empty() {
            return Err(Error::InsufficientSamples("validation set is empty".into()));
        }
        if !(settings.learning_rate > 0.0 && settings.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                settings.learning_rate
            )));
        }
        // fail early if the pools cannot produce a single batch
        let probe = domain_batches(&pools, settings.batch_per_domain, settings.shuffle_seed, 0)?;
        if probe.num_batches() == 0 {
            return Err(Error::InsufficientSamples(format!(
                "every training domain needs at least {} samples",
                settings.batch_per_domain
            )));
        }
        if pools.len() < 2 && settings.alpha != 0.0 {
            log::warn!("single training domain: alignment terms are zero");
        }
        Ok(NetworkTrainer {
            params,
            settings,
            pools,
            validation,
        })
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }
}

impl EpochModel for NetworkTrainer {
    fn train_epoch(&mut self, epoch: usize) -> Result<TrainStats> {
        let s = self.settings;
        let k = self.params.config().num_classes;
        let mut sum = LossBreakdown {
            ce_ls: 0.0,
            mean: 0.0,
            cov: 0.0,
            align: 0.0,
            total: 0.0,
            alpha: s.alpha,
        };
        let mut batches = 0usize;
        for batch in domain_batches(&self.pools, s.batch_per_domain, s.shuffle_seed, epoch as u64)? {
            let fwd = forward(&self.params, &batch)?;
            let targets = smooth_labels(&batch.labels, k, s.epsilon)?;
            let (parts, grads) =
                total_loss(&fwd.logits, &targets, &fwd.reps, &batch.groups, s.alpha, s.pair_scale)?;
            let g = backward(&self.params, &batch, &fwd, &grads.d_reps, &grads.d_logits)?;
            self.params = sgd_step(&self.params, &g, s.learning_rate)?;
            sum.ce_ls += parts.ce_ls;
            sum.mean += parts.mean;
            sum.cov += parts.cov;
            sum.align += parts.align;
            sum.total += parts.total;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        Ok(TrainStats {
            loss: LossBreakdown {
                ce_ls: sum.ce_ls / n,
                mean: sum.mean / n,
                cov: sum.cov / n,
                align: sum.align / n,
                total: sum.total / n,
                alpha: s.alpha,
            },
            batches,
        })
    }

    fn validate(&mut self) -> Result<Validation> {
        let r = evaluate(&self.params, &self.validation)?;
        Ok(Validation {
            loss: r.loss,
            accuracy: r.accuracy,
        })
    }

    fn params(&self) -> &ParamVector {
        &self.params
    }
}

/// Predictions, representations and plain cross-entropy over a sample set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub reps: Array2<f64>,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate(params: &ParamVector, samples: &[NormalizedSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples("nothing to evaluate".into()));
    }
    let cfg = params.config();
    let mut predictions = Vec::with_capacity(samples.len());
    let mut reps = Array2::zeros((samples.len(), cfg.repr_dim));
    let mut loss_sum = 0.0;
    let mut row = 0;
    for batch in eval_batches(samples, EVAL_CHUNK)? {
        let fwd = forward(params, &batch)?;
        let targets = smooth_labels(&batch.labels, cfg.num_classes, 0.0)?;
        let (ce, _) = smoothed_cross_entropy(&fwd.logits, &targets)?;
        loss_sum += ce * batch.len() as f64;
        reps.slice_mut(ndarray::s![row..row + batch.len(), ..]).assign(&fwd.reps);
        row += batch.len();
        predictions.extend(fwd.predictions());
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let correct = predictions.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok(Evaluation {
        accuracy: correct as f64 / samples.len() as f64,
        loss: loss_sum / samples.len() as f64,
        predictions,
        labels,
        reps,
    })
}
