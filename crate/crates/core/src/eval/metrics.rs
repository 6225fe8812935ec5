//! Accuracy and class-weighted F1 from one-vs-rest confusion counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    /// Samples whose true class is this one.
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    /// `TP/(TP+FP)`, 0 when nothing was predicted as this class.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP/(TP+FN)`, 0 when the class is absent.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: Vec<ClassCounts>,
    pub total: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if let Some(bad) = predictions.iter().chain(labels).find(|&&c| c >= num_classes) {
            return Err(Error::InvalidArgument(format!("class {bad} outside 0..{num_classes}")));
        }
        let mut classes = vec![ClassCounts::default(); num_classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            if p == y {
                classes[y].tp += 1;
            } else {
                classes[y].fn_ += 1;
                classes[p].fp += 1;
            }
        }
        let total = labels.len() as u64;
        for c in classes.iter_mut() {
            c.tn = total - c.tp - c.fp - c.fn_;
        }
        Ok(ConfusionCounts { classes, total })
    }

    /// `Σ_c (TP_c + TN_c) / Σ_c (TP_c + TN_c + FP_c + FN_c)`, the one-vs-rest
    /// accuracy averaged over classes.
    pub fn one_vs_rest_accuracy(&self) -> f64 {
        let (mut num, mut den) = (0u64, 0u64);
        for c in &self.classes {
            num += c.tp + c.tn;
            den += c.tp + c.tn + c.fp + c.fn_;
        }
        ratio(num, den)
    }

    /// Fraction of samples whose predicted class equals the label.
    pub fn top1_accuracy(&self) -> f64 {
        ratio(self.classes.iter().map(|c| c.tp).sum(), self.total)
    }

    /// `Σ_c (n_c/Σ n_i) · F1_c`.
    pub fn weighted_f1(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.classes
            .iter()
            .map(|c| c.support() as f64 / self.total as f64 * c.f1())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Top-1 accuracy, the headline figure.
    pub accuracy: f64,
    /// One-vs-rest accuracy exactly as the metric is printed.
    pub literal_accuracy: f64,
    pub weighted_f1: f64,
    pub counts: ConfusionCounts,
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Metrics> {
    let counts = ConfusionCounts::from_predictions(predictions, labels, num_classes)?;
    Ok(Metrics {
        accuracy: counts.top1_accuracy(),
        literal_accuracy: counts.one_vs_rest_accuracy(),
        weighted_f1: counts.weighted_f1(),
        counts,
    })
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
