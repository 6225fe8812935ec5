//! Offline valley search over a loss trace and checkpoint weighting.
//!
//! Epochs are 1-based throughout: `trace[0]` is the loss after epoch 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValleyConfig {
    /// Convergence patience `N_s`.
    pub converge_patience: usize,
    /// Overfit patience `N_e`.
    pub overfit_patience: usize,
    /// Tolerance ratio `r`.
    pub tolerance: f64,
    /// Temperature `τ`.
    pub temperature: f64,
    /// Epoch budget `T_tr`.
    pub max_epochs: usize,
}

impl Default for ValleyConfig {
    fn default() -> Self {
        ValleyConfig {
            converge_patience: 10,
            overfit_patience: 5,
            tolerance: 1.1,
            temperature: 0.01,
            max_epochs: 120,
        }
    }
}

impl ValleyConfig {
    pub fn validate(&self) -> Result<()> {
        let (ns, ne, t) = (self.converge_patience, self.overfit_patience, self.max_epochs);
        if !(1 <= ne && ne <= ns && ns <= t) {
            return Err(Error::Config(format!(
                "valley patience must satisfy 1 <= N_e ({ne}) <= N_s ({ns}) <= T_tr ({t})"
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!("valley.tolerance must be > 0, got {}", self.tolerance)));
        }
        if !(self.temperature > 0.0 && self.temperature < 1.0) {
            return Err(Error::Config(format!(
                "valley.temperature must lie in (0, 1), got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Per-epoch validation losses `e_1..e_T`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossTrace(pub Vec<f64>);

impl LossTrace {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("loss trace entries must be finite and >= 0".into()));
        }
        Ok(LossTrace(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Loss at 1-based `epoch`.
    pub fn at(&self, epoch: usize) -> f64 {
        self.0[epoch - 1]
    }

    fn window(&self, start: usize, len: usize) -> &[f64] {
        &self.0[start - 1..start - 1 + len]
    }
}

/// Earliest epoch `i` whose loss is not beaten by any of the next `N_s − 1`
/// epochs (ties count as not decreasing). Only complete windows are scanned.
pub fn find_converge_epoch(trace: &LossTrace, patience: usize) -> Option<usize> {
    if patience == 0 || trace.len() < patience {
        return None;
    }
    (1..=trace.len() + 1 - patience).find(|&i| {
        let e_i = trace.at(i);
        trace.window(i, patience).iter().all(|&e| e_i <= e)
    })
}

/// `γ = r · mean(e_{t_s} .. e_{t_s+N_s−1})`.
pub fn overfit_threshold(trace: &LossTrace, converge_epoch: usize, patience: usize, tolerance: f64) -> f64 {
    let w = trace.window(converge_epoch, patience);
    tolerance * (w.iter().sum::<f64>() / patience as f64)
}

/// Earliest epoch `i ≥ from` starting `N_e` consecutive losses all above `γ`.
pub fn find_overfit_epoch(trace: &LossTrace, from: usize, threshold: f64, patience: usize) -> Option<usize> {
    if patience == 0 || from == 0 || trace.len() < patience {
        return None;
    }
    (from..=trace.len() + 1 - patience)
        .find(|&i| trace.window(i, patience).iter().all(|&e| e > threshold))
}

fn check_losses(reference: f64, loss: f64, temperature: f64) -> Result<()> {
    if !(reference > 0.0 && loss > 0.0) || !reference.is_finite() || !loss.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint weights need positive finite losses, got {reference} and {loss}"
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    Ok(())
}

/// `((e_ts / e_i) − 1) / τ`, the log of the stabilized weight.
pub fn log_checkpoint_weight(reference: f64, loss: f64, temperature: f64) -> Result<f64> {
    check_losses(reference, loss, temperature)?;
    Ok((reference / loss - 1.0) / temperature)
}

/// `exp(((e_ts / e_i) − 1) / τ)`: the dynamic weight divided by the constant
/// `exp(1/τ)`, which cancels after normalization.
pub fn checkpoint_weight(reference: f64, loss: f64, temperature: f64) -> Result<f64> {
    Ok(log_checkpoint_weight(reference, loss, temperature)?.exp())
}

/// Normalized weights over `losses`, computed in log space.
pub fn normalized_weights(reference: f64, losses: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let logs = losses
        .iter()
        .map(|&e| log_checkpoint_weight(reference, e, temperature))
        .collect::<Result<Vec<_>>>()?;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}
