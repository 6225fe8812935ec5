//! Jensen–Shannon divergence between two representation sets after a
//! deterministic one-dimensional projection.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};

pub const JSD_BINS: usize = 64;
pub const JSD_SMOOTHING: f64 = 1e-9;

/// First principal direction of the rows of `a` and `b` together, oriented so
/// the projected union has non-negative skew.
pub fn principal_direction(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let d = a.ncols();
    if b.ncols() != d {
        return Err(Error::Shape(format!("representation widths {d} vs {}", b.ncols())));
    }
    let n = (a.nrows() + b.nrows()) as f64;
    let rows = || a.rows().into_iter().chain(b.rows());
    let mut mean = Array1::<f64>::zeros(d);
    for r in rows() {
        mean += &r;
    }
    mean /= n;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows() {
        let c: Vec<f64> = r.iter().zip(mean.iter()).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut top = 0;
    for k in 1..d {
        if eig.eigenvalues[k] > eig.eigenvalues[top] {
            top = k;
        }
    }
    let mut dir: Array1<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let proj: Vec<f64> = rows().map(|r| r.dot(&dir) - mean.dot(&dir)).collect();
    let third: f64 = proj.iter().map(|p| p * p * p).sum();
    let flip = if third != 0.0 {
        third < 0.0
    } else {
        // symmetric projection: fall back to the sign of the largest component
        let k = (0..d)
            .max_by(|&i, &j| dir[i].abs().total_cmp(&dir[j].abs()))
            .unwrap_or(0);
        dir[k] < 0.0
    };
    if flip {
        dir.mapv_inplace(|v| -v);
    }
    Ok(dir)
}

/// Smoothed histogram over `bins` equal cells spanning `[lo, hi]`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = hi - lo;
    for &v in values {
        let k = if width > 0.0 {
            (((v - lo) / width) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
        } else {
            0
        };
        counts[k] += 1.0;
    }
    let n = values.len() as f64;
    let norm = 1.0 + bins as f64 * JSD_SMOOTHING;
    counts.iter().map(|c| (c / n + JSD_SMOOTHING) / norm).collect()
}

/// `½·KL(p‖m) + ½·KL(q‖m)` with `m = (p + q)/2`, natural log.
pub fn jsd_of_distributions(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            total += 0.5 * pi * (pi / m).ln();
        }
        if qi > 0.0 {
            total += 0.5 * qi * (qi / m).ln();
        }
    }
    total.max(0.0)
}

/// Projects both sets onto the union's first principal component, histograms
/// them on a shared 64-bin grid and returns their JSD in `[0, ln 2]`.
pub fn jsd_divergence(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "divergence needs at least 2 samples per side, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("representations"));
    }
    let dir = principal_direction(a, b)?;
    let pa: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&dir)).collect();
    let pb: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&dir)).collect();
    let lo = pa.iter().chain(&pb).copied().fold(f64::INFINITY, f64::min);
    let hi = pa.iter().chain(&pb).copied().fold(f64::NEG_INFINITY, f64::max);
    let ha = histogram(&pa, lo, hi, JSD_BINS);
    let hb = histogram(&pb, lo, hi, JSD_BINS);
    Ok(jsd_of_distributions(&ha, &hb))
}
