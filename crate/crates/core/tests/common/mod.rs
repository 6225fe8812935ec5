//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the code under test except to
//! build inputs.
#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeSet;

use flowalign::model::{Batch, DomainGroup, ModelConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central finite difference of `f` at `x` along every coordinate.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

// ---------------------------------------------------------------- alignment

/// Column means computed with explicit loops.
pub fn brute_mean(z: &Array2<f64>) -> Vec<f64> {
    let (n, d) = z.dim();
    (0..d).map(|j| (0..n).map(|i| z[[i, j]]).sum::<f64>() / n as f64).collect()
}

/// Unbiased covariance computed entry by entry.
pub fn brute_cov(z: &Array2<f64>) -> Vec<Vec<f64>> {
    let (n, d) = z.dim();
    let mu = brute_mean(z);
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    (0..n).map(|i| (z[[i, a]] - mu[a]) * (z[[i, b]] - mu[b])).sum::<f64>() / (n as f64 - 1.0)
                })
                .collect()
        })
        .collect()
}

pub fn pair_factor(s: usize, literal: bool) -> f64 {
    let pairs = (s * (s - 1)) as f64 / 2.0;
    if literal {
        pairs
    } else {
        1.0 / pairs
    }
}

pub fn brute_mean_loss(domains: &[Array2<f64>], literal: bool) -> f64 {
    let d = domains[0].ncols();
    let mus: Vec<Vec<f64>> = domains.iter().map(brute_mean).collect();
    let mut sum = 0.0;
    for i in 0..domains.len() {
        for j in i + 1..domains.len() {
            sum += (0..d).map(|k| (mus[i][k] - mus[j][k]).powi(2)).sum::<f64>();
        }
    }
    pair_factor(domains.len(), literal) * sum / d as f64
}

pub fn brute_cov_loss(domains: &[Array2<f64>], literal: bool) -> f64 {
    let d = domains[0].ncols();
    let covs: Vec<Vec<Vec<f64>>> = domains.iter().map(brute_cov).collect();
    let mut sum = 0.0;
    for i in 0..domains.len() {
        for j in i + 1..domains.len() {
            for a in 0..d {
                for b in 0..d {
                    sum += (covs[i][a][b] - covs[j][a][b]).powi(2);
                }
            }
        }
    }
    pair_factor(domains.len(), literal) * sum / (d * d) as f64
}

// ---------------------------------------------------------------- model inputs

pub fn small_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    ModelConfig {
        byte_input_len: rng.gen_range(2..7),
        size_trace_len: rng.gen_range(1..5),
        interval_trace_len: rng.gen_range(1..5),
        hidden_width: rng.gen_range(1..5),
        repr_dim: rng.gen_range(1..5),
        num_classes: rng.gen_range(2..5),
        seed: rng.gen(),
    }
}

/// A random batch with `domains` groups of `per_domain` rows each.
pub fn random_batch(rng: &mut ChaCha8Rng, cfg: &ModelConfig, domains: usize, per_domain: usize) -> Batch {
    let n = domains * per_domain;
    let bytes = Array2::from_shape_fn((n, cfg.byte_input_len), |_| rng.gen_range(0.0..1.0));
    let sizes = Array2::from_shape_fn((n, cfg.size_trace_len), |_| rng.gen_range(-1.0..1.0));
    let intervals = Array2::from_shape_fn((n, cfg.interval_trace_len), |_| rng.gen_range(0.0..1.0));
    let labels = (0..n).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
    let groups = (0..domains)
        .map(|d| DomainGroup {
            domain: d,
            rows: d * per_domain..(d + 1) * per_domain,
        })
        .collect();
    Batch::new(bytes, sizes, intervals, labels, groups).expect("consistent batch")
}

// ---------------------------------------------------------------- valley search

/// Earliest i (1-based) whose full window of `ns` losses has its minimum at i.
pub fn brute_converge(trace: &[f64], ns: usize) -> Option<usize> {
    let t = trace.len();
    for i in 1..=t {
        if i + ns - 1 > t {
            return None;
        }
        let window = &trace[i - 1..i - 1 + ns];
        if window.iter().all(|&e| trace[i - 1] <= e) {
            return Some(i);
        }
    }
    None
}

/// Earliest i ≥ from whose `ne` losses all exceed `gamma`.
pub fn brute_overfit(trace: &[f64], from: usize, gamma: f64, ne: usize) -> Option<usize> {
    let t = trace.len();
    (from.max(1)..=t).find(|&i| i + ne - 1 <= t && trace[i - 1..i - 1 + ne].iter().all(|&e| e > gamma))
}

/// Offline markers: convergence epoch, threshold, and the stop epoch implied
/// by the first over-threshold window the online procedure can observe
/// (it only checks after convergence is announced at epoch t_s + N_s − 1).
pub fn offline_markers(trace: &[f64], ns: usize, ne: usize, r: f64) -> (Option<usize>, Option<f64>, Option<usize>) {
    let Some(ts) = brute_converge(trace, ns) else {
        return (None, None, None);
    };
    let gamma = r * (trace[ts - 1..ts - 1 + ns].iter().sum::<f64>() / ns as f64);
    let announced = ts + ns - 1;
    let te = brute_overfit(trace, announced + 2 - ne, gamma, ne);
    (Some(ts), Some(gamma), te.map(|t| t + ne - 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub converge_epoch: Option<usize>,
    pub stop_epoch: Option<usize>,
    pub merged: Vec<usize>,
}

/// Line-by-line replay of the online procedure with plain vectors as queues.
pub fn replay_online(trace: &[f64], ns: usize, ne: usize, r: f64) -> Replay {
    let mut qc: Vec<(usize, f64)> = Vec::new();
    let mut qo: Vec<(usize, f64)> = Vec::new();
    let mut ts = None;
    let mut gamma: Option<f64> = None;
    let mut merged = Vec::new();
    let mut stop = None;
    for (idx, &e) in trace.iter().enumerate() {
        let epoch = idx + 1;
        if qc.len() == ns {
            qc.remove(0);
        }
        qc.push((epoch, e));
        if qo.len() == ne {
            qo.remove(0);
        }
        qo.push((epoch, e));
        if gamma.is_some_and(|g| qo.iter().all(|&(_, x)| x > g)) {
            stop = Some(epoch);
            break;
        } else if ts.is_none() && qc.len() == ns && qc.iter().all(|&(_, x)| qc[0].1 <= x) {
            ts = Some(qc[0].0);
            gamma = Some(r * (qc.iter().map(|&(_, x)| x).sum::<f64>() / ns as f64));
            merged.extend(qc.iter().take(ns - ne).map(|&(ep, _)| ep));
        } else if ts.is_some() {
            let (ep, _) = qo.remove(0);
            merged.push(ep);
        }
    }
    Replay {
        converge_epoch: ts,
        stop_epoch: stop,
        merged,
    }
}

/// Random positive trace: a noisy descent into a valley followed, sometimes,
/// by a climb.
pub fn random_trace(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = rng.gen_range(1..=200);
    let floor = rng.gen_range(0.05..1.0);
    let bottom = rng.gen_range(0..len.max(1));
    let climb = if rng.gen_bool(0.6) { rng.gen_range(0.0..0.08) } else { 0.0 };
    let noise = rng.gen_range(0.0..0.2);
    let quantize = rng.gen_bool(0.3);
    (0..len)
        .map(|i| {
            let base = if i < bottom {
                floor * (1.0 + 2.0 * (bottom - i) as f64 / bottom.max(1) as f64)
            } else {
                floor * (1.0 + climb * (i - bottom) as f64)
            };
            let v = base * (1.0 + rng.gen_range(-noise..=noise));
            let v = if quantize { (v * 20.0).round() / 20.0 } else { v };
            v.max(1e-3)
        })
        .collect()
}

// ---------------------------------------------------------------- merging

/// `Σ w_i θ_i / Σ w_i` with `w_i = exp((e_ref/e_i)/τ)`, shifted by the largest
/// exponent before exponentiating.
pub fn closed_form_average(thetas: &[Vec<f64>], losses: &[f64], reference: f64, tau: f64) -> Vec<f64> {
    let expo: Vec<f64> = losses.iter().map(|e| (reference / e) / tau).collect();
    let max = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = expo.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    (0..thetas[0].len())
        .map(|k| thetas.iter().zip(&w).map(|(t, wi)| wi * t[k]).sum::<f64>() / total)
        .collect()
}

pub fn as_set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

// ---------------------------------------------------------------- pcap fixtures

pub struct RawPacket {
    pub ts_sec: u32,
    pub ts_frac: u32,
    pub data: Vec<u8>,
}

/// Classic pcap bytes with the microsecond little-endian magic, or the
/// big-endian encoding of the same file when `big_endian` is set.
pub fn pcap_file(packets: &[RawPacket], big_endian: bool) -> Vec<u8> {
    let w32 = |out: &mut Vec<u8>, v: u32| {
        if big_endian {
            out.extend_from_slice(&v.to_be_bytes())
        } else {
            out.extend_from_slice(&v.to_le_bytes())
        }
    };
    let w16 = |out: &mut Vec<u8>, v: u16| {
        if big_endian {
            out.extend_from_slice(&v.to_be_bytes())
        } else {
            out.extend_from_slice(&v.to_le_bytes())
        }
    };
    let mut out = Vec::new();
    w32(&mut out, 0xa1b2_c3d4);
    w16(&mut out, 2);
    w16(&mut out, 4);
    w32(&mut out, 0);
    w32(&mut out, 0);
    w32(&mut out, 65535);
    w32(&mut out, 1);
    for p in packets {
        w32(&mut out, p.ts_sec);
        w32(&mut out, p.ts_frac);
        w32(&mut out, p.data.len() as u32);
        w32(&mut out, p.data.len() as u32);
        out.extend_from_slice(&p.data);
    }
    out
}

/// Ethernet + IPv4 + TCP frame built byte by byte. Returns the frame and the
/// offset of the IPv4 header within it.
pub fn tcp_frame(src: [u8; 4], dst: [u8; 4], sport: u16, dport: u16, seq: u32, payload: &[u8]) -> Vec<u8> {
    let mut f = Vec::new();
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]); // dst mac
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]); // src mac
    f.extend_from_slice(&[0x08, 0x00]);
    let total = (20 + 20 + payload.len()) as u16;
    f.push(0x45);
    f.push(0x00);
    f.extend_from_slice(&total.to_be_bytes());
    f.extend_from_slice(&[0x12, 0x34]); // id
    f.extend_from_slice(&[0x40, 0x00]); // DF
    f.push(64); // ttl
    f.push(6); // tcp
    f.extend_from_slice(&[0xab, 0xcd]); // checksum (unchecked)
    f.extend_from_slice(&src);
    f.extend_from_slice(&dst);
    f.extend_from_slice(&sport.to_be_bytes());
    f.extend_from_slice(&dport.to_be_bytes());
    f.extend_from_slice(&seq.to_be_bytes());
    f.extend_from_slice(&0u32.to_be_bytes());
    f.push(0x50); // data offset 5
    f.push(0x18); // PSH|ACK
    f.extend_from_slice(&[0x72, 0x10]); // window
    f.extend_from_slice(&[0x00, 0x00, 0x00, 0x00]);
    f.extend_from_slice(payload);
    f
}

pub const ETH_HEADER: usize = 14;
