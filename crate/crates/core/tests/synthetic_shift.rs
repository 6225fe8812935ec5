//! Statistical checks on the synthetic generator's domain shift.

use flowalign::data::batches::pools_from_samples;
use flowalign::data::synthetic::{generate_synthetic, GeneratorConfig};
use flowalign::data::{normalize, DomainDataset, NormalizedSample, BYTE_GRID_LEN, TRACE_LEN};
use flowalign::ensemble::EpochModel;
use flowalign::losses::PairScale;
use flowalign::model::{init_model, ModelConfig};
use flowalign::training::{evaluate, NetworkTrainer, TrainSettings};

fn dataset(magnitude: f64, per_class_domain: usize, seed: u64) -> DomainDataset {
    generate_synthetic(&GeneratorConfig {
        num_classes: 3,
        num_domains: 3,
        per_class_domain,
        magnitude,
        seed,
    })
    .unwrap()
}

/// Mean and standard error of the summed absolute size trace of one class in
/// one domain.
fn size_stats(ds: &DomainDataset, domain: usize, class: usize) -> (f64, f64) {
    let xs: Vec<f64> = ds.domains[domain]
        .iter()
        .filter(|s| s.label == class)
        .map(|s| s.size_trace.iter().map(|v| v.abs() as f64).sum())
        .collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn full_shift_moves_class_size_means_beyond_their_standard_error() {
    for seed in 0..3 {
        let ds = dataset(1.0, 150, seed);
        for class in 0..3 {
            for a in 0..3 {
                for b in a + 1..3 {
                    let (ma, sa) = size_stats(&ds, a, class);
                    let (mb, sb) = size_stats(&ds, b, class);
                    let se = (sa * sa + sb * sb).sqrt();
                    assert!(
                        (ma - mb).abs() > se,
                        "seed {seed} class {class} domains {a}/{b}: |{ma:.1} - {mb:.1}| <= {se:.1}"
                    );
                }
            }
        }
    }
}

fn accuracy(params: &flowalign::model::ParamVector, samples: &[NormalizedSample]) -> f64 {
    evaluate(params, samples).unwrap().accuracy
}

/// Without shift, holding out a domain is no harder than an in-domain split.
#[test]
fn zero_shift_held_out_domain_behaves_like_an_iid_split() {
    let mut gaps = Vec::new();
    for seed in 0..5 {
        let ds = dataset(0.0, 300, 100 + seed);
        let normalized: Vec<Vec<NormalizedSample>> =
            ds.domains.iter().map(|d| d.iter().map(normalize).collect()).collect();
        // per class of domains 0 and 1: 60% train, 10% validation, 30% in-domain test
        let (mut train, mut val, mut in_domain) = (Vec::new(), Vec::new(), Vec::new());
        for d in &normalized[..2] {
            for class in 0..3 {
                let of_class: Vec<NormalizedSample> = d.iter().filter(|s| s.label == class).cloned().collect();
                let n = of_class.len();
                train.extend_from_slice(&of_class[..n * 6 / 10]);
                val.extend_from_slice(&of_class[n * 6 / 10..n * 7 / 10]);
                in_domain.extend_from_slice(&of_class[n * 7 / 10..]);
            }
        }
        let cfg = ModelConfig {
            byte_input_len: BYTE_GRID_LEN,
            size_trace_len: TRACE_LEN,
            interval_trace_len: TRACE_LEN,
            hidden_width: 16,
            repr_dim: 8,
            num_classes: 3,
            seed,
        };
        let settings = TrainSettings {
            epsilon: 0.0,
            alpha: 0.0,
            pair_scale: PairScale::PairMean,
            learning_rate: 0.03,
            batch_per_domain: 32,
            shuffle_seed: seed,
        };
        let mut t = NetworkTrainer::new(init_model(&cfg).unwrap(), settings, pools_from_samples(train), val).unwrap();
        for epoch in 1..=30 {
            t.train_epoch(epoch).unwrap();
        }
        let params = t.into_params();
        let (inside, held_out) = (accuracy(&params, &in_domain), accuracy(&params, &normalized[2]));
        assert!(inside > 0.5, "seed {seed}: the model did not learn ({inside})");
        gaps.push(inside - held_out);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean_gap.abs() < 0.03, "mean accuracy gap {mean_gap:.4} over seeds ({gaps:?})");
}
