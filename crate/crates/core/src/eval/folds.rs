//! Leave-one-domain-out folds and the per-domain i.i.d. split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::batches::mix_seed;
use crate::data::DomainDataset;
use crate::error::{Error, Result};

/// `(domain, index within domain)`.
pub type SampleRef = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_domain: usize,
    pub train: Vec<SampleRef>,
    pub val: Vec<SampleRef>,
}

impl Fold {
    pub fn test(&self, dataset: &DomainDataset) -> Vec<SampleRef> {
        (0..dataset.domains[self.test_domain].len())
            .map(|i| (self.test_domain, i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Size of the smaller part when splitting `n` items at `ratio`, rounded to
/// the nearest integer.
fn part(n: usize, ratio: f64) -> usize {
    ((n as f64) * ratio).round() as usize
}

fn shuffled(mut refs: Vec<SampleRef>, seed: u64, salt: u64) -> Vec<SampleRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, salt]));
    refs.shuffle(&mut rng);
    refs
}

/// One fold per domain: that domain is the test set, the remaining domains
/// are pooled and split 9:1 into train and validation.
pub fn make_cross_domain_folds(dataset: &DomainDataset, seed: u64) -> Result<FoldPlan> {
    let s = dataset.num_domains();
    if s < 2 {
        return Err(Error::InsufficientSamples(format!(
            "cross-domain folds need at least 2 domains, dataset has {s}"
        )));
    }
    if dataset.domains.iter().any(Vec::is_empty) {
        return Err(Error::InsufficientSamples("every domain needs samples".into()));
    }
    let folds = (0..s)
        .map(|test| {
            let pooled: Vec<SampleRef> = (0..s)
                .filter(|&d| d != test)
                .flat_map(|d| (0..dataset.domains[d].len()).map(move |i| (d, i)))
                .collect();
            let pooled = shuffled(pooled, seed, 0x464f_4c44 ^ test as u64);
            let n_val = part(pooled.len(), 0.1);
            let (val, train) = pooled.split_at(n_val);
            let mut train = train.to_vec();
            let mut val = val.to_vec();
            train.sort_unstable();
            val.sort_unstable();
            Fold {
                test_domain: test,
                train,
                val,
            }
        })
        .collect();
    Ok(FoldPlan { seed, folds })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IidSplit {
    pub train: Vec<SampleRef>,
    pub val: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
}

/// Splits every domain 8:1:1 and merges the parts across domains.
pub fn make_iid_split(dataset: &DomainDataset, seed: u64) -> Result<IidSplit> {
    if dataset.is_empty() {
        return Err(Error::InsufficientSamples("empty dataset".into()));
    }
    let mut split = IidSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (d, samples) in dataset.domains.iter().enumerate() {
        let n = samples.len();
        let refs = shuffled((0..n).map(|i| (d, i)).collect(), seed, 0x4949_4400 ^ d as u64);
        let n_val = part(n, 0.1);
        let n_test = part(n, 0.1);
        let n_train = n - n_val - n_test;
        let mut parts = [
            refs[..n_train].to_vec(),
            refs[n_train..n_train + n_val].to_vec(),
            refs[n_train + n_val..].to_vec(),
        ];
        for p in parts.iter_mut() {
            p.sort_unstable();
        }
        let [tr, va, te] = parts;
        split.train.extend(tr);
        split.val.extend(va);
        split.test.extend(te);
    }
    Ok(split)
}
