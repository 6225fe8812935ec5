//! Whole-criterion checks. Each panics with a description of the first
//! mismatch and otherwise returns a one-line summary, so the same code backs
//! the per-topic tests and the acceptance report.

use std::sync::Arc;

use flowalign::data::features::extract_features;
use flowalign::data::flow::assemble_flows;
use flowalign::data::pcap::parse_pcap_bytes;
use flowalign::data::{BYTE_GRID_LEN, GRID_ROW_LEN, HEADER_BYTES, TRACE_LEN};
use flowalign::ensemble::{
    normalized_weights, run_training, EpochModel, TrainStats, TrainingOutcome, Validation, ValleyConfig,
};
use flowalign::eval::compute_metrics;
use flowalign::losses::{
    alignment_loss, covariance_alignment_loss, mean_alignment_loss, smooth_labels, smoothed_cross_entropy,
    total_loss, DomainReps, LossBreakdown, PairScale,
};
use flowalign::model::{backward, forward, init_model, Layout, ModelConfig, ParamVector};
use ndarray::Array2;
use rand::Rng;

use super::*;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

// ---------------------------------------------------------------- gradients

pub fn groups_of(z: &Array2<f64>, sizes: &[usize]) -> Vec<(usize, Array2<f64>)> {
    let mut start = 0;
    sizes
        .iter()
        .enumerate()
        .map(|(d, &n)| {
            let g = z.slice(ndarray::s![start..start + n, ..]).to_owned();
            start += n;
            (d, g)
        })
        .collect()
}

pub fn reps_of(groups: &[(usize, Array2<f64>)]) -> DomainReps<'_> {
    DomainReps::new(groups.iter().map(|(d, z)| (*d, z.view())).collect()).unwrap()
}

fn worst(analytic: impl IntoIterator<Item = f64>, numeric: &[f64]) -> f64 {
    analytic.into_iter().zip(numeric).map(|(a, n)| rel_err(a, *n)).fold(0.0, f64::max)
}

/// One alignment term's gradient w.r.t. every representation entry.
pub fn alignment_term_error(
    f: impl Fn(&DomainReps<'_>) -> (f64, Vec<(usize, Array2<f64>)>),
    seed: u64,
) -> f64 {
    let mut r = rng(seed);
    let s = r.gen_range(2..5);
    let d = r.gen_range(1..5);
    let sizes: Vec<usize> = (0..s).map(|_| r.gen_range(2..7)).collect();
    let n: usize = sizes.iter().sum();
    let z = random_matrix(&mut r, n, d, 1.5);
    let groups = groups_of(&z, &sizes);
    let (_, grads) = f(&reps_of(&groups));
    let numeric = central_differences(z.as_slice().unwrap(), FD_STEP, |x| {
        let zz = Array2::from_shape_vec((n, d), x.to_vec()).unwrap();
        f(&reps_of(&groups_of(&zz, &sizes))).0
    });
    worst(grads.iter().flat_map(|(_, g)| g.iter().copied()), &numeric)
}

pub fn mean_term_error(seed: u64, scale: PairScale) -> f64 {
    alignment_term_error(
        |r| {
            let t = mean_alignment_loss(r, scale).unwrap();
            (t.value, t.grads)
        },
        seed,
    )
}

pub fn cov_term_error(seed: u64, scale: PairScale) -> f64 {
    alignment_term_error(
        |r| {
            let t = covariance_alignment_loss(r, scale).unwrap();
            (t.value, t.grads)
        },
        seed,
    )
}

/// Smoothed cross-entropy w.r.t. the logits.
pub fn cross_entropy_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.gen_range(1..6);
    let k = r.gen_range(2..6);
    let logits = random_matrix(&mut r, n, k, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let eps = [0.0, 0.1, 0.3][seed as usize % 3];
    let targets = smooth_labels(&labels, k, eps).unwrap();
    let (_, g) = smoothed_cross_entropy(&logits, &targets).unwrap();
    let numeric = central_differences(logits.as_slice().unwrap(), FD_STEP, |x| {
        let l = Array2::from_shape_vec((n, k), x.to_vec()).unwrap();
        smoothed_cross_entropy(&l, &targets).unwrap().0
    });
    worst(g.iter().copied(), &numeric)
}

/// The full objective through the network, over every parameter coordinate.
pub fn total_objective_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut cfg = small_config(&mut r);
    cfg.seed = seed;
    let domains = r.gen_range(1..4);
    let per_domain = r.gen_range(2..5);
    let batch = random_batch(&mut r, &cfg, domains, per_domain);
    let alpha = [0.0, 0.5, 2.0][seed as usize % 3];
    let eps = [0.1, 0.0][seed as usize % 2];
    let scale = if seed.is_multiple_of(2) { PairScale::PairMean } else { PairScale::Literal };
    let mut params = init_model(&cfg).unwrap();
    // larger weights than the init keep the tanh units away from their linear regime
    params.scale(1.7);
    let targets = smooth_labels(&batch.labels, cfg.num_classes, eps).unwrap();

    let fwd = forward(&params, &batch).unwrap();
    let (_, grads) = total_loss(&fwd.logits, &targets, &fwd.reps, &batch.groups, alpha, scale).unwrap();
    let analytic = backward(&params, &batch, &fwd, &grads.d_reps, &grads.d_logits).unwrap();
    let layout = params.layout().clone();
    let numeric = central_differences(params.values(), FD_STEP, |x| {
        let p = ParamVector::from_values(layout.clone(), x.to_vec()).unwrap();
        let fwd = forward(&p, &batch).unwrap();
        total_loss(&fwd.logits, &targets, &fwd.reps, &batch.groups, alpha, scale).unwrap().0.total
    });
    worst(analytic.values().iter().copied(), &numeric)
}

pub fn gradient_suite(instances: u64) -> String {
    let mut report = Vec::new();
    let mut check = |name: &str, errors: Vec<f64>| {
        let w = errors.iter().copied().fold(0.0, f64::max);
        let bad = errors.iter().position(|&e| !(e < FD_TOL));
        assert!(bad.is_none(), "{name}: instance {} has relative error {:e}", bad.unwrap(), errors[bad.unwrap()]);
        report.push(format!("{name} {w:.1e}"));
    };
    for scale in [PairScale::Literal, PairScale::PairMean] {
        check(&format!("mean/{scale:?}"), (0..instances).map(|s| mean_term_error(s, scale)).collect());
        check(&format!("cov/{scale:?}"), (0..instances).map(|s| cov_term_error(100 + s, scale)).collect());
    }
    check("ce-ls", (0..instances).map(|s| cross_entropy_error(200 + s)).collect());
    check("total", (0..instances).map(|s| total_objective_error(300 + s)).collect());
    format!("{instances} instances each, worst relative error: {}", report.join(", "))
}

// ---------------------------------------------------------------- invariants

/// `s` domains of `d`-dimensional representations plus a translation vector.
pub fn random_domains(seed: u64) -> (Vec<Array2<f64>>, Vec<f64>) {
    let mut r = rng(seed);
    let s = r.gen_range(2..5);
    let d = r.gen_range(1..5);
    let n = r.gen_range(2..7);
    let mats = (0..s)
        .map(|_| {
            let rows = n + r.gen_range(0..3);
            random_matrix(&mut r, rows, d, 3.0)
        })
        .collect();
    let shift = (0..d).map(|_| r.gen_range(-10.0..10.0)).collect();
    (mats, shift)
}

pub fn identical_domains_error(mats: &[Array2<f64>]) -> f64 {
    let copies: Vec<(usize, Array2<f64>)> = (0..mats.len()).map(|d| (d, mats[0].clone())).collect();
    let al = alignment_loss(&reps_of(&copies), PairScale::PairMean).unwrap();
    al.grads.iter().flat_map(|(_, g)| g.iter()).fold(al.value.abs(), |m, v| m.max(v.abs()))
}

/// Relative change of the covariance term when every domain is translated.
pub fn translation_error(mats: &[Array2<f64>], shift: &[f64]) -> f64 {
    let base: Vec<(usize, Array2<f64>)> = mats.iter().cloned().enumerate().collect();
    let moved: Vec<(usize, Array2<f64>)> = mats
        .iter()
        .enumerate()
        .map(|(d, m)| (d, m + &(ndarray::Array1::from(shift.to_vec()) * (d as f64 + 1.0))))
        .collect();
    let a = covariance_alignment_loss(&reps_of(&base), PairScale::PairMean).unwrap().value;
    let b = covariance_alignment_loss(&reps_of(&moved), PairScale::PairMean).unwrap().value;
    (a - b).abs() / a.abs().max(1.0)
}

/// Whether handing the same domains over in another order changes any bit.
pub fn order_is_bit_exact(mats: &[Array2<f64>], rotation: usize) -> bool {
    let fwd: Vec<(usize, Array2<f64>)> = mats.iter().cloned().enumerate().collect();
    let mut shuffled = fwd.clone();
    let len = shuffled.len();
    shuffled.rotate_left(rotation % len);
    shuffled.reverse();
    let a = alignment_loss(&reps_of(&fwd), PairScale::PairMean).unwrap();
    let b = alignment_loss(&reps_of(&shuffled), PairScale::PairMean).unwrap();
    let grads_equal = a.grads.iter().all(|(d, g)| {
        let (_, h) = b.grads.iter().find(|(e, _)| e == d).expect("same domains");
        g.iter().zip(h.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    a.mean.to_bits() == b.mean.to_bits() && a.cov.to_bits() == b.cov.to_bits() && grads_equal
}

pub fn is_nonnegative(mats: &[Array2<f64>]) -> bool {
    let g: Vec<(usize, Array2<f64>)> = mats.iter().cloned().enumerate().collect();
    [PairScale::Literal, PairScale::PairMean].iter().all(|&scale| {
        let al = alignment_loss(&reps_of(&g), scale).unwrap();
        al.mean >= 0.0 && al.cov >= 0.0
    })
}

pub fn alignment_invariants(instances: u64) -> String {
    let (mut zero, mut shift) = (0.0f64, 0.0f64);
    for seed in 0..instances {
        let (mats, t) = random_domains(1_000 + seed);
        let z = identical_domains_error(&mats);
        assert!(z < 1e-12, "seed {seed}: identical domains give {z:e}");
        let s = translation_error(&mats, &t);
        assert!(s < 1e-10, "seed {seed}: translation changes the covariance term by {s:e}");
        assert!(order_is_bit_exact(&mats, seed as usize), "seed {seed}: domain order changes the result");
        assert!(is_nonnegative(&mats), "seed {seed}: negative alignment term");
        zero = zero.max(z);
        shift = shift.max(s);
    }
    format!("{instances} instances: identical-domain max {zero:.1e}, translation max {shift:.1e}, order bit-exact, nonnegative")
}

// ---------------------------------------------------------------- valley search

/// Replays scripted validation losses; the parameters after each epoch are
/// either scripted or all equal to the epoch number.
pub struct Scripted {
    pub losses: Vec<f64>,
    pub params: Vec<ParamVector>,
    pub epoch: usize,
}

pub fn tiny_layout() -> Arc<Layout> {
    let cfg = ModelConfig {
        byte_input_len: 2,
        size_trace_len: 1,
        interval_trace_len: 1,
        hidden_width: 1,
        repr_dim: 1,
        num_classes: 2,
        seed: 0,
    };
    Arc::new(Layout::new(&cfg).unwrap())
}

impl Scripted {
    pub fn epoch_valued(losses: &[f64]) -> Self {
        let l = tiny_layout();
        let params = (1..=losses.len())
            .map(|e| ParamVector::from_values(l.clone(), vec![e as f64; l.len()]).unwrap())
            .collect();
        Scripted { losses: losses.to_vec(), params, epoch: 0 }
    }

    /// Random parameters per epoch.
    pub fn random(losses: &[f64], seed: u64, spread: f64) -> Self {
        let mut r = rng(seed);
        let l = tiny_layout();
        let params = (0..losses.len())
            .map(|_| ParamVector::from_values(l.clone(), (0..l.len()).map(|_| r.gen_range(-spread..spread)).collect()).unwrap())
            .collect();
        Scripted { losses: losses.to_vec(), params, epoch: 0 }
    }
}

impl EpochModel for Scripted {
    fn train_epoch(&mut self, epoch: usize) -> flowalign::Result<TrainStats> {
        self.epoch = epoch;
        Ok(TrainStats {
            loss: LossBreakdown { ce_ls: 0.0, mean: 0.0, cov: 0.0, align: 0.0, total: 0.0, alpha: 0.0 },
            batches: 1,
        })
    }
    fn validate(&mut self) -> flowalign::Result<Validation> {
        Ok(Validation { loss: self.losses[self.epoch - 1], accuracy: 0.5 })
    }
    fn params(&self) -> &ParamVector {
        &self.params[self.epoch - 1]
    }
}

pub fn drive(model: &mut Scripted, cfg: &ValleyConfig) -> TrainingOutcome {
    run_training(model, cfg, &mut |_| Ok(())).unwrap()
}

/// The merged index set implied by the offline markers: the first
/// `N_s − N_e` epochs of the convergence window, then one epoch per later
/// non-stopping epoch, trailing the current epoch by `N_e − 1`.
pub fn offline_merged(ts: usize, ns: usize, ne: usize, last_merging_epoch: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (ts..ts + ns - ne).collect();
    let announced = ts + ns - 1;
    for e in announced + 1..=last_merging_epoch {
        out.push(e + 1 - ne);
    }
    out
}

/// Draws a trace together with a valid configuration for it.
pub fn random_case(seed: u64) -> (Vec<f64>, ValleyConfig) {
    let mut r = rng(seed);
    let mut trace = random_trace(&mut r);
    let ns = r.gen_range(1..=12);
    while trace.len() < ns {
        trace.push(trace[trace.len() - 1] * 1.01);
    }
    let ne = r.gen_range(1..=ns);
    let cfg = ValleyConfig {
        converge_patience: ns,
        overfit_patience: ne,
        tolerance: r.gen_range(1.0..1.3),
        temperature: 0.01,
        max_epochs: trace.len(),
    };
    (trace, cfg)
}

/// Online driver vs offline search vs line-by-line replay on `traces` traces.
pub fn valley_search_oracle(traces: u64) -> String {
    let (mut converged, mut stopped) = (0, 0);
    for seed in 0..traces {
        let (trace, cfg) = random_case(seed);
        let (ns, ne, r) = (cfg.converge_patience, cfg.overfit_patience, cfg.tolerance);
        let out = drive(&mut Scripted::epoch_valued(&trace), &cfg);

        let (ts, gamma, stop) = offline_markers(&trace, ns, ne, r);
        let replay = replay_online(&trace, ns, ne, r);
        let expected_merged = match ts {
            None => vec![],
            Some(ts) => offline_merged(ts, ns, ne, stop.map_or(trace.len(), |s| s - 1)),
        };

        assert_eq!(out.converge_epoch, ts, "seed {seed}: t_s");
        assert_eq!(out.stop_epoch, stop, "seed {seed}: stop epoch");
        assert_eq!(out.merged_epochs, expected_merged, "seed {seed}: merged set");
        match (out.threshold, gamma) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12 * b, "seed {seed}: threshold {a} vs {b}"),
            (a, b) => assert_eq!(a, b, "seed {seed}: threshold"),
        }
        assert_eq!(replay.converge_epoch, ts, "seed {seed}: replay t_s");
        assert_eq!(replay.stop_epoch, stop, "seed {seed}: replay stop");
        assert_eq!(replay.merged, expected_merged, "seed {seed}: replay merged");
        assert_eq!(out.epochs_run(), stop.unwrap_or(trace.len()), "seed {seed}: epochs run");
        converged += ts.is_some() as usize;
        stopped += stop.is_some() as usize;
    }
    format!("{traces}/{traces} traces match ({converged} converged, {stopped} stopped)")
}

// ---------------------------------------------------------------- merging

/// Online θ* vs the closed-form weighted average on `sequences` converging
/// runs; returns the largest absolute difference.
pub fn merge_vs_closed_form(sequences: usize) -> f64 {
    let mut checked = 0;
    let mut seed = 10_000;
    let mut worst = 0.0f64;
    while checked < sequences {
        seed += 1;
        let (trace, cfg) = random_case(seed);
        let mut model = Scripted::random(&trace, seed ^ 0xabcd, 3.0);
        let params = model.params.clone();
        let out = drive(&mut model, &cfg);
        let Some(merged) = out.merged.as_ref() else { continue };
        let ts = out.converge_epoch.unwrap();
        let thetas: Vec<Vec<f64>> = out.merged_epochs.iter().map(|&e| params[e - 1].values().to_vec()).collect();
        let losses: Vec<f64> = out.merged_epochs.iter().map(|&e| trace[e - 1]).collect();
        let expected = closed_form_average(&thetas, &losses, trace[ts - 1], cfg.temperature);
        let diff = merged.values().iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "seed {seed}: max abs diff {diff:e}");
        worst = worst.max(diff);
        checked += 1;
    }
    worst
}

/// Flat traces: θ* must be the plain mean of the merged checkpoints.
pub fn uniform_merge_error() -> f64 {
    let mut worst = 0.0f64;
    for (ns, ne, t) in [(2, 1, 9), (4, 2, 12), (10, 5, 40), (3, 3, 7), (1, 1, 5)] {
        let mut model = Scripted::random(&vec![0.42; t], ns as u64 * 100 + t as u64, 5.0);
        let params = model.params.clone();
        let cfg = ValleyConfig { converge_patience: ns, overfit_patience: ne, tolerance: 1.1, temperature: 0.01, max_epochs: t };
        let out = drive(&mut model, &cfg);
        let merged = out.merged.expect("flat traces converge at epoch 1");
        let k = out.merged_epochs.len() as f64;
        for (j, got) in merged.values().iter().enumerate() {
            let mean = out.merged_epochs.iter().map(|&e| params[e - 1].values()[j]).sum::<f64>() / k;
            let d = (got - mean).abs();
            assert!(d < 1e-12, "N_s {ns} N_e {ne}: {got} vs mean {mean}");
            worst = worst.max(d);
        }
    }
    worst
}

pub fn merge_oracle(sequences: usize) -> String {
    let closed = merge_vs_closed_form(sequences);
    let uniform = uniform_merge_error();
    format!("{sequences} sequences, max abs diff {closed:.1e}; uniform-loss diff {uniform:.1e}")
}

/// Stabilized normalized weights vs the naive exponentials.
pub fn weight_stabilization(cases: usize) -> String {
    let mut r = rng(77);
    let (mut rel, mut sum_err) = (0.0f64, 0.0f64);
    for case in 0..cases {
        let n = r.gen_range(1..30);
        let losses: Vec<f64> = (0..n).map(|_| r.gen_range(0.2..1.5)).collect();
        let reference = losses.iter().copied().fold(f64::INFINITY, f64::min) * r.gen_range(0.9..1.1);
        let tau = r.gen_range(0.01..0.2);
        let stable = normalized_weights(reference, &losses, tau).unwrap();
        let naive: Vec<f64> = losses.iter().map(|e| ((reference / e) / tau).exp()).collect();
        let total: f64 = naive.iter().sum();
        if !total.is_finite() {
            continue;
        }
        for (s, w) in stable.iter().zip(&naive) {
            let w = w / total;
            let e = (s - w).abs() / w;
            assert!(e <= 1e-12, "case {case}: {s:e} vs {w:e}");
            rel = rel.max(e);
        }
        let se = (stable.iter().sum::<f64>() - 1.0).abs();
        assert!(se < 1e-12, "case {case}: weights sum to 1 + {se:e}");
        sum_err = sum_err.max(se);
    }
    // far outside the naive form's range the stabilized weights stay finite
    let extreme = normalized_weights(1.0, &[1.0, 1.0 + 1e-3, 2.0], 1e-4).unwrap();
    assert!(extreme.iter().all(|w| w.is_finite()), "{extreme:?}");
    assert!((extreme.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    format!("{cases} cases, max relative diff {rel:.1e}, max |sum - 1| {sum_err:.1e}")
}

// ---------------------------------------------------------------- metrics

/// Expands a confusion matrix (rows = true class) into label/prediction lists.
pub fn from_confusion(matrix: &[&[usize]]) -> (Vec<usize>, Vec<usize>) {
    let (mut labels, mut preds) = (Vec::new(), Vec::new());
    for (t, row) in matrix.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            labels.extend(std::iter::repeat_n(t, n));
            preds.extend(std::iter::repeat_n(p, n));
        }
    }
    (labels, preds)
}

pub fn metric_fixtures() -> String {
    let close = |a: f64, b: f64| (a - b).abs() <= 2.0 * f64::EPSILON;
    // binary, positive class 1: TP 40, FN 10, FP 5, TN 45
    let (labels, preds) = from_confusion(&[&[45, 5], &[10, 40]]);
    let m = compute_metrics(&preds, &labels, 2).unwrap();
    let c1 = &m.counts.classes[1];
    assert_eq!((c1.tp, c1.fn_, c1.fp, c1.tn), (40, 10, 5, 45));
    assert!(close(c1.precision(), 40.0 / 45.0) && close(c1.recall(), 0.8));
    assert!(close(m.literal_accuracy, (40.0 + 45.0 + 45.0 + 40.0) / 200.0), "{}", m.literal_accuracy);
    assert!(close(m.accuracy, 0.85));
    // F1 = 2TP / (2TP + FP + FN) per class, weighted by support 50/50
    let f1 = 0.5 * (80.0 / 95.0) + 0.5 * (90.0 / 105.0);
    assert!(close(m.weighted_f1, f1), "{} vs {f1}", m.weighted_f1);

    // three classes, unequal supports 6/6/4
    let (labels, preds) = from_confusion(&[&[5, 1, 0], &[2, 3, 1], &[1, 0, 3]]);
    let m3 = compute_metrics(&preds, &labels, 3).unwrap();
    assert!(close(m3.accuracy, 11.0 / 16.0));
    assert!(close(m3.literal_accuracy, 38.0 / 48.0), "{}", m3.literal_accuracy);
    let f1_3 = 6.0 / 16.0 * (10.0 / 14.0) + 6.0 / 16.0 * (6.0 / 10.0) + 4.0 / 16.0 * (6.0 / 8.0);
    assert!(close(m3.weighted_f1, f1_3), "{} vs {f1_3}", m3.weighted_f1);

    // a class never predicted contributes F1 0
    let (labels, preds) = from_confusion(&[&[3, 0], &[2, 0]]);
    let m0 = compute_metrics(&preds, &labels, 2).unwrap();
    assert!(close(m0.weighted_f1, 0.6 * (6.0 / 8.0)));
    format!(
        "binary acc {:.4} (literal {:.4}) F1 {:.6}; 3-class acc {:.4} F1 {:.6}",
        m.accuracy, m.literal_accuracy, m.weighted_f1, m3.accuracy, m3.weighted_f1
    )
}

// ---------------------------------------------------------------- pcap

pub const CLIENT: [u8; 4] = [10, 0, 0, 7];
pub const SERVER: [u8; 4] = [192, 168, 1, 20];

/// Three packets of one TCP conversation, a reply in between, plus an ARP
/// frame and an IPv6 frame that must be skipped and counted.
pub fn conversation() -> Vec<RawPacket> {
    let arp = {
        let mut f = vec![0xff; 6];
        f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x09]);
        f.extend_from_slice(&[0x08, 0x06]);
        f.extend_from_slice(&[0u8; 28]);
        f
    };
    let ipv6 = {
        let mut f = vec![0x02, 0, 0, 0, 0, 0x01, 0x02, 0, 0, 0, 0, 0x02, 0x86, 0xdd];
        f.extend_from_slice(&[0x60; 40]);
        f
    };
    vec![
        RawPacket { ts_sec: 1_700_000_000, ts_frac: 250_000, data: tcp_frame(CLIENT, SERVER, 51_000, 443, 1, b"hello, server") },
        RawPacket { ts_sec: 1_700_000_000, ts_frac: 300_000, data: arp },
        RawPacket { ts_sec: 1_700_000_000, ts_frac: 750_500, data: tcp_frame(SERVER, CLIENT, 443, 51_000, 9, &[0xaa; 120]) },
        RawPacket { ts_sec: 1_700_000_001, ts_frac: 5, data: ipv6 },
        RawPacket { ts_sec: 1_700_000_002, ts_frac: 125, data: tcp_frame(CLIENT, SERVER, 51_000, 443, 14, &[]) },
    ]
}

/// Expected byte-grid row: the 40 header bytes after the Ethernet header with
/// address bytes 12..20 and port bytes 20..24 zeroed, then the payload.
pub fn expected_row(frame: &[u8]) -> Vec<u8> {
    let ip = &frame[ETH_HEADER..];
    let mut row = vec![0u8; GRID_ROW_LEN];
    row[..40].copy_from_slice(&ip[..40]);
    for b in &mut row[12..24] {
        *b = 0;
    }
    let payload = &ip[40..];
    let n = payload.len().min(GRID_ROW_LEN - HEADER_BYTES);
    row[HEADER_BYTES..HEADER_BYTES + n].copy_from_slice(&payload[..n]);
    row
}

/// Parses, assembles and extracts the conversation capture and compares
/// every stage against the hand-built expectation.
pub fn check_capture(bytes: &[u8]) {
    let packets = conversation();
    let cap = parse_pcap_bytes(bytes).unwrap();
    assert_eq!(cap.packets.len(), 5);
    for (got, want) in cap.packets.iter().zip(&packets) {
        assert_eq!(got.data, want.data);
        assert_eq!(got.timestamp, want.ts_sec as f64 + want.ts_frac as f64 * 1e-6);
    }

    let (flows, counters) = assemble_flows(&cap).unwrap();
    assert_eq!(flows.len(), 1);
    assert_eq!((counters.packets, counters.accepted, counters.non_ip, counters.ipv6), (5, 3, 1, 1));

    let s = extract_features(&flows[0], 3, 1).unwrap();
    assert_eq!((s.label, s.domain), (3, 1));
    let tcp: Vec<&RawPacket> = [0, 2, 4].iter().map(|&i| &packets[i]).collect();
    let mut grid = vec![0u8; BYTE_GRID_LEN];
    for (row, p) in tcp.iter().enumerate() {
        grid[row * GRID_ROW_LEN..(row + 1) * GRID_ROW_LEN].copy_from_slice(&expected_row(&p.data));
    }
    assert_eq!(s.byte_grid, grid);

    // masked offsets: addresses inside the IPv4 header, ports at the start of TCP
    for row in 0..3 {
        let base = row * GRID_ROW_LEN;
        assert!(s.byte_grid[base + 12..base + 24].iter().all(|&b| b == 0));
        // TTL and protocol survive masking
        assert_eq!(s.byte_grid[base + 8], 64);
        assert_eq!(s.byte_grid[base + 9], 6);
    }
    // the reply's sequence number right after the masked ports
    assert_eq!(&s.byte_grid[GRID_ROW_LEN + 24..GRID_ROW_LEN + 28], &9u32.to_be_bytes());

    let mut sizes = vec![0; TRACE_LEN];
    sizes[..3].copy_from_slice(&[40 + 13, -(40 + 120), 40]);
    assert_eq!(s.size_trace, sizes);
    let ts: Vec<f64> = tcp.iter().map(|p| p.ts_sec as f64 + p.ts_frac as f64 * 1e-6).collect();
    let mut intervals = vec![0.0; TRACE_LEN];
    intervals[1] = ts[1] - ts[0];
    intervals[2] = ts[2] - ts[1];
    assert_eq!(s.interval_trace, intervals);
}

pub fn pcap_round_trip() -> String {
    check_capture(&pcap_file(&conversation(), false));
    check_capture(&pcap_file(&conversation(), true));
    let le = parse_pcap_bytes(&pcap_file(&conversation(), false)).unwrap();
    let be = parse_pcap_bytes(&pcap_file(&conversation(), true)).unwrap();
    assert_eq!(le.packets, be.packets);
    "5-packet capture (both byte orders): 1 flow, 3 packets, grid bit-exact, offsets 12..24 masked".into()
}
