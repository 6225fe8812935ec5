//! Domain-balanced mini-batches.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NormalizedSample;
use crate::error::{Error, Result};
use crate::model::{Batch, DomainGroup};

/// Normalized samples of a single domain.
#[derive(Debug, Clone)]
pub struct DomainPool {
    pub domain: usize,
    pub samples: Vec<NormalizedSample>,
}

/// Groups normalized samples into pools, ordered by domain id.
pub fn pools_from_samples(samples: impl IntoIterator<Item = NormalizedSample>) -> Vec<DomainPool> {
    let mut pools: Vec<DomainPool> = Vec::new();
    for s in samples {
        match pools.iter_mut().find(|p| p.domain == s.domain) {
            Some(p) => p.samples.push(s),
            None => pools.push(DomainPool {
                domain: s.domain,
                samples: vec![s],
            }),
        }
    }
    pools.sort_by_key(|p| p.domain);
    pools
}

/// splitmix64 finalizer, used to derive independent stream seeds.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Stacks samples into a batch; consecutive samples with the same domain form
/// one group.
pub fn batch_from_samples(samples: &[&NormalizedSample]) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientSamples("empty batch".into()))?;
    let n = samples.len();
    let stack = |f: &dyn Fn(&NormalizedSample) -> &[f64], width: usize| -> Result<Array2<f64>> {
        let mut m = Array2::zeros((n, width));
        for (mut row, s) in m.rows_mut().into_iter().zip(samples) {
            let v = f(s);
            if v.len() != width {
                return Err(Error::Shape("samples disagree on feature width".into()));
            }
            row.assign(&ndarray::ArrayView1::from(v));
        }
        Ok(m)
    };
    let bytes = stack(&|s| &s.bytes, first.bytes.len())?;
    let sizes = stack(&|s| &s.sizes, first.sizes.len())?;
    let intervals = stack(&|s| &s.intervals, first.intervals.len())?;
    let mut groups: Vec<DomainGroup> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if g.domain == s.domain => g.rows.end = i + 1,
            _ => groups.push(DomainGroup {
                domain: s.domain,
                rows: i..i + 1,
            }),
        }
    }
    Batch::new(
        bytes,
        sizes,
        intervals,
        samples.iter().map(|s| s.label).collect(),
        groups,
    )
}

/// Iterator over batches holding exactly `per_domain` samples of every pool.
/// Each epoch reshuffles every pool from `(seed, epoch, domain)`; the number of
/// batches is set by the smallest pool and short remainders are dropped.
pub struct DomainBatches<'a> {
    pools: &'a [DomainPool],
    orders: Vec<Vec<usize>>,
    per_domain: usize,
    next: usize,
    count: usize,
}

pub fn domain_batches(
    pools: &[DomainPool],
    per_domain: usize,
    seed: u64,
    epoch: u64,
) -> Result<DomainBatches<'_>> {
    if per_domain == 0 {
        return Err(Error::InvalidArgument("batch size per domain must be positive".into()));
    }
    if pools.is_empty() || pools.iter().any(|p| p.samples.is_empty()) {
        return Err(Error::InsufficientSamples("every training domain needs samples".into()));
    }
    let orders: Vec<Vec<usize>> = pools
        .iter()
        .map(|p| {
            let mut idx: Vec<usize> = (0..p.samples.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch, p.domain as u64]));
            idx.shuffle(&mut rng);
            idx
        })
        .collect();
    let count = pools.iter().map(|p| p.samples.len() / per_domain).min().unwrap_or(0);
    Ok(DomainBatches {
        pools,
        orders,
        per_domain,
        next: 0,
        count,
    })
}

impl DomainBatches<'_> {
    pub fn num_batches(&self) -> usize {
        self.count
    }
}

impl Iterator for DomainBatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.count {
            return None;
        }
        let window = self.next * self.per_domain..(self.next + 1) * self.per_domain;
        self.next += 1;
        let picked: Vec<&NormalizedSample> = self
            .pools
            .iter()
            .zip(&self.orders)
            .flat_map(|(pool, order)| order[window.clone()].iter().map(move |&i| &pool.samples[i]))
            .collect();
        Some(batch_from_samples(&picked).expect("pools hold consistent shapes"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

/// Fixed-order chunks for evaluation.
pub fn eval_batches(samples: &[NormalizedSample], chunk: usize) -> Result<Vec<Batch>> {
    let chunk = chunk.max(1);
    samples
        .chunks(chunk)
        .map(|c| batch_from_samples(&c.iter().collect::<Vec<_>>()))
        .collect()
}
