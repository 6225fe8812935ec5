//! Training objectives: per-domain representation statistics, mean and
//! covariance alignment, label-smoothed cross-entropy and their weighted sum.
//!
//! All reductions run in a fixed order (ascending domain id, ascending pair,
//! ascending row) so results are reproducible bit-for-bit.
//!
//! Covariance alignment gradient. With `X_i = Z_i − 1μ_iᵀ` and
//! `C_i = X_iᵀX_i / (N_i − 1)`, the loss `L = c·Σ_{i<j} ‖C_i − C_j‖²_F` with
//! `c = pair_scale / D²` has `∂L/∂C_i = G_i = 2c·Σ_{j≠i}(C_i − C_j)`, which is
//! symmetric. Differentiating the quadratic form gives
//! `∂L/∂Z_i = P·X_i·(G_i + G_iᵀ)/(N_i − 1)` where `P` is the centering
//! projector; because the columns of `X_i` already sum to zero, `P·X_i = X_i`
//! and the gradient reduces to `2·X_i·G_i/(N_i − 1)`.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DomainGroup;

/// Multiplier applied to the sum over domain pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairScale {
    /// `S(S−1)/2`, exactly as the objective is printed.
    Literal,
    /// `2/(S(S−1))`, an average over pairs.
    #[default]
    PairMean,
}

impl PairScale {
    pub fn factor(self, domains: usize) -> f64 {
        let pairs = (domains * domains.saturating_sub(1)) as f64 / 2.0;
        match self {
            PairScale::Literal => pairs,
            PairScale::PairMean => {
                if pairs == 0.0 {
                    0.0
                } else {
                    1.0 / pairs
                }
            }
        }
    }
}

/// Representations grouped by domain id.
#[derive(Debug, Clone)]
pub struct DomainReps<'a> {
    groups: Vec<(usize, ArrayView2<'a, f64>)>,
    dim: usize,
}

impl<'a> DomainReps<'a> {
    /// Groups are reordered by domain id; ids must be unique.
    pub fn new(mut groups: Vec<(usize, ArrayView2<'a, f64>)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InsufficientSamples("no domains".into()));
        }
        groups.sort_by_key(|(id, _)| *id);
        if groups.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate domain id".into()));
        }
        let dim = groups[0].1.ncols();
        for (id, z) in &groups {
            if z.ncols() != dim {
                return Err(Error::Shape(format!("domain {id} has width {}, expected {dim}", z.ncols())));
            }
            if z.nrows() == 0 {
                return Err(Error::InsufficientSamples(format!("domain {id} is empty")));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("representations"));
            }
        }
        Ok(DomainReps { groups, dim })
    }

    pub fn from_batch(reps: &'a Array2<f64>, groups: &[DomainGroup]) -> Result<Self> {
        let views = groups
            .iter()
            .map(|g| (g.domain, reps.slice(ndarray::s![g.rows.clone(), ..])))
            .collect();
        DomainReps::new(views)
    }

    pub fn num_domains(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_ids(&self) -> impl Iterator<Item = usize> + use<'_, 'a> {
        self.groups.iter().map(|(id, _)| *id)
    }
}

pub fn domain_mean(z: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let n = z.nrows();
    if n == 0 {
        return Err(Error::InsufficientSamples("mean of zero rows".into()));
    }
    let mut mu = Array1::zeros(z.ncols());
    for row in z.rows() {
        mu += &row;
    }
    Ok(mu / n as f64)
}

/// Mean and unbiased sample covariance of the rows of `z`.
pub fn domain_stats(z: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let mu = domain_mean(z)?;
    let centered = &z - &mu;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    Ok((mu, cov))
}

/// One alignment term with its gradient per domain (in ascending domain id order).
#[derive(Debug, Clone)]
pub struct AlignmentTerm {
    pub value: f64,
    pub grads: Vec<(usize, Array2<f64>)>,
    /// Set when fewer than two domains were supplied and the term is zero by convention.
    pub degenerate: bool,
}

impl AlignmentTerm {
    fn zero(reps: &DomainReps<'_>) -> Self {
        AlignmentTerm {
            value: 0.0,
            grads: reps
                .groups
                .iter()
                .map(|(id, z)| (*id, Array2::zeros(z.raw_dim())))
                .collect(),
            degenerate: true,
        }
    }
}

pub fn mean_alignment_loss(reps: &DomainReps<'_>, scale: PairScale) -> Result<AlignmentTerm> {
    let s = reps.num_domains();
    if s < 2 {
        log::warn!("mean alignment with a single domain is zero");
        return Ok(AlignmentTerm::zero(reps));
    }
    let d = reps.dim as f64;
    let c = scale.factor(s) / d;
    let means = reps
        .groups
        .iter()
        .map(|(_, z)| domain_mean(z.view()))
        .collect::<Result<Vec<_>>>()?;

    let mut pair_sum = 0.0;
    for i in 0..s {
        for j in i + 1..s {
            pair_sum += means[i]
                .iter()
                .zip(means[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }

    let mut grads = Vec::with_capacity(s);
    for (i, (id, z)) in reps.groups.iter().enumerate() {
        let mut d_mu = Array1::<f64>::zeros(reps.dim);
        for j in 0..s {
            if j != i {
                d_mu += &(&means[i] - &means[j]);
            }
        }
        d_mu *= 2.0 * c / z.nrows() as f64;
        let g = Array2::from_shape_fn(z.raw_dim(), |(_, k)| d_mu[k]);
        grads.push((*id, g));
    }
    Ok(AlignmentTerm {
        value: c * pair_sum,
        grads,
        degenerate: false,
    })
}

pub fn covariance_alignment_loss(reps: &DomainReps<'_>, scale: PairScale) -> Result<AlignmentTerm> {
    let s = reps.num_domains();
    if s < 2 {
        log::warn!("covariance alignment with a single domain is zero");
        return Ok(AlignmentTerm::zero(reps));
    }
    let d = reps.dim as f64;
    let c = scale.factor(s) / (d * d);
    let mut centered = Vec::with_capacity(s);
    let mut covs = Vec::with_capacity(s);
    for (id, z) in &reps.groups {
        if z.nrows() < 2 {
            return Err(Error::InsufficientSamples(format!(
                "domain {id} has {} rows; covariance alignment needs at least 2",
                z.nrows()
            )));
        }
        let (mu, cov) = domain_stats(z.view())?;
        centered.push(z - &mu);
        covs.push(cov);
    }

    let mut pair_sum = 0.0;
    for i in 0..s {
        for j in i + 1..s {
            pair_sum += covs[i]
                .iter()
                .zip(covs[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }

    let mut grads = Vec::with_capacity(s);
    for (i, (id, z)) in reps.groups.iter().enumerate() {
        let mut g_cov = Array2::<f64>::zeros((reps.dim, reps.dim));
        for j in 0..s {
            if j != i {
                g_cov += &(&covs[i] - &covs[j]);
            }
        }
        g_cov *= 2.0 * c;
        let g = centered[i].dot(&g_cov) * (2.0 / (z.nrows() - 1) as f64);
        grads.push((*id, g));
    }
    Ok(AlignmentTerm {
        value: c * pair_sum,
        grads,
        degenerate: false,
    })
}

#[derive(Debug, Clone)]
pub struct AlignmentLoss {
    pub mean: f64,
    pub cov: f64,
    pub value: f64,
    pub grads: Vec<(usize, Array2<f64>)>,
    pub degenerate: bool,
}

pub fn alignment_loss(reps: &DomainReps<'_>, scale: PairScale) -> Result<AlignmentLoss> {
    let mean = mean_alignment_loss(reps, scale)?;
    let cov = covariance_alignment_loss(reps, scale)?;
    let grads = mean
        .grads
        .into_iter()
        .zip(cov.grads)
        .map(|((id, gm), (_, gc))| (id, gm + gc))
        .collect();
    Ok(AlignmentLoss {
        mean: mean.value,
        cov: cov.value,
        value: mean.value + cov.value,
        grads,
        degenerate: mean.degenerate,
    })
}

/// Per-sample target distributions after label smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTarget {
    pub probs: Array2<f64>,
    pub epsilon: f64,
}

pub fn smooth_labels(labels: &[usize], num_classes: usize, epsilon: f64) -> Result<SmoothedTarget> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "label smoothing must lie in [0, 1), got {epsilon}"
        )));
    }
    if num_classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    let floor = epsilon / num_classes as f64;
    let mut probs = Array2::from_elem((labels.len(), num_classes), floor);
    for (row, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        probs[[row, y]] = (1.0 - epsilon) + floor;
    }
    Ok(SmoothedTarget { probs, epsilon })
}

/// Mean over rows of `−Σ_k y_k · log softmax(logits)_k`, evaluated through
/// log-sum-exp. Returns the loss and its gradient `(softmax − y)/N`.
pub fn smoothed_cross_entropy(
    logits: &Array2<f64>,
    targets: &SmoothedTarget,
) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.probs.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} vs targets {:?}",
            logits.dim(),
            targets.probs.dim()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let n = logits.nrows();
    if n == 0 {
        return Err(Error::InsufficientSamples("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((row, y), mut g) in logits
        .rows()
        .into_iter()
        .zip(targets.probs.rows())
        .zip(grad.rows_mut())
    {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += row
            .iter()
            .zip(y.iter())
            .map(|(&l, &t)| t * (lse - l))
            .sum::<f64>();
        for ((gk, &l), &t) in g.iter_mut().zip(row.iter()).zip(y.iter()) {
            *gk = ((l - lse).exp() - t) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce_ls: f64,
    pub mean: f64,
    pub cov: f64,
    pub align: f64,
    pub total: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct LossGradients {
    pub d_logits: Array2<f64>,
    pub d_reps: Array2<f64>,
}

/// `L = L_CE-LS + α·(L_mean + L_cov)` over a batch whose rows are grouped by domain.
pub fn total_loss(
    logits: &Array2<f64>,
    targets: &SmoothedTarget,
    reps: &Array2<f64>,
    groups: &[DomainGroup],
    alpha: f64,
    scale: PairScale,
) -> Result<(LossBreakdown, LossGradients)> {
    let (ce_ls, d_logits) = smoothed_cross_entropy(logits, targets)?;
    let mut d_reps = Array2::zeros(reps.raw_dim());
    let (mean, cov, align) = if alpha == 0.0 {
        (0.0, 0.0, 0.0)
    } else {
        let domain_reps = DomainReps::from_batch(reps, groups)?;
        let al = alignment_loss(&domain_reps, scale)?;
        for (id, g) in &al.grads {
            for group in groups.iter().filter(|grp| grp.domain == *id) {
                d_reps
                    .slice_mut(ndarray::s![group.rows.clone(), ..])
                    .scaled_add(alpha, g);
            }
        }
        (al.mean, al.cov, al.value)
    };
    let total = ce_ls + alpha * align;
    Ok((
        LossBreakdown {
            ce_ls,
            mean,
            cov,
            align,
            total,
            alpha,
        },
        LossGradients { d_logits, d_reps },
    ))
}
