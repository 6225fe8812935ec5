//! Data plane: pcap parsing, flow assembly, feature extraction, the synthetic
//! shifted-traffic generator, domain-balanced batching and the dataset file.

pub mod batches;
pub mod features;
pub mod flow;
pub mod io;
pub mod pcap;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Packets contributing rows to the byte grid.
pub const GRID_PACKETS: usize = 10;
pub const HEADER_BYTES: usize = 80;
pub const PAYLOAD_BYTES: usize = 80;
pub const GRID_ROW_LEN: usize = HEADER_BYTES + PAYLOAD_BYTES;
pub const BYTE_GRID_LEN: usize = GRID_PACKETS * GRID_ROW_LEN;
/// Packets contributing to the size and interval traces.
pub const TRACE_LEN: usize = 20;

/// One flow's fixed-shape features plus its class and domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    /// `GRID_PACKETS` rows of 80 masked header bytes followed by 80 payload bytes.
    pub byte_grid: Vec<u8>,
    /// Signed IP lengths; positive means initiator to responder.
    pub size_trace: Vec<i32>,
    /// Seconds since the previous packet; the first entry is 0.
    pub interval_trace: Vec<f64>,
    pub label: usize,
    pub domain: usize,
}

impl FlowSample {
    pub fn validate(&self) -> Result<()> {
        if self.byte_grid.len() != BYTE_GRID_LEN
            || self.size_trace.len() != TRACE_LEN
            || self.interval_trace.len() != TRACE_LEN
        {
            return Err(Error::Shape(format!(
                "flow sample shapes {}/{}/{} differ from {BYTE_GRID_LEN}/{TRACE_LEN}/{TRACE_LEN}",
                self.byte_grid.len(),
                self.size_trace.len(),
                self.interval_trace.len()
            )));
        }
        if self.interval_trace.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("intervals must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Pcap,
    Synthetic,
    Import,
}

/// Samples grouped by dense domain id over a shared class universe.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub num_classes: usize,
    pub domains: Vec<Vec<FlowSample>>,
    pub provenance: Provenance,
}

impl DomainDataset {
    /// Builds a dataset from loose samples. `num_domains` fixes S even when
    /// trailing domains would otherwise be inferred as absent.
    pub fn from_samples(
        num_classes: usize,
        num_domains: usize,
        samples: Vec<FlowSample>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut domains = vec![Vec::new(); num_domains];
        for s in samples {
            let d = s.domain;
            domains
                .get_mut(d)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("domain id {d} outside 0..{num_domains}"))
                })?
                .push(s);
        }
        let ds = DomainDataset {
            num_classes,
            domains,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn len(&self) -> usize {
        self.domains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = &FlowSample> {
        self.domains.iter().flatten()
    }

    /// A dataset with no samples at all is valid (an empty capture); otherwise
    /// every domain must be populated.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least 2 classes, has {}",
                self.num_classes
            )));
        }
        if self.is_empty() {
            return Ok(());
        }
        for (d, samples) in self.domains.iter().enumerate() {
            if samples.is_empty() {
                return Err(Error::InvalidArgument(format!("domain {d} has no samples")));
            }
            for s in samples {
                s.validate()?;
                if s.domain != d {
                    return Err(Error::InvalidArgument(format!(
                        "sample filed under domain {d} claims domain {}",
                        s.domain
                    )));
                }
                if s.label >= self.num_classes {
                    return Err(Error::InvalidArgument(format!(
                        "label {} outside 0..{}",
                        s.label, self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    /// `counts[d][c]` = samples of class `c` in domain `d`.
    pub fn class_counts(&self) -> Vec<Vec<usize>> {
        self.domains
            .iter()
            .map(|samples| {
                let mut counts = vec![0; self.num_classes];
                for s in samples {
                    counts[s.label] += 1;
                }
                counts
            })
            .collect()
    }
}

/// Model-ready vectors for one flow.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSample {
    pub bytes: Vec<f64>,
    pub sizes: Vec<f64>,
    pub intervals: Vec<f64>,
    pub label: usize,
    pub domain: usize,
}

pub const SIZE_CAP: f64 = 1500.0;
pub const INTERVAL_CAP_SECS: f64 = 60.0;

/// Bytes centred to `[−1, 1]` (a zero byte maps to −1), sizes clipped to ±1500 and scaled to `[−1, 1]`,
/// intervals `log1p`-scaled so 60 s maps to 1.
pub fn normalize(sample: &FlowSample) -> NormalizedSample {
    let log_cap = INTERVAL_CAP_SECS.ln_1p();
    NormalizedSample {
        bytes: sample.byte_grid.iter().map(|&b| b as f64 / 127.5 - 1.0).collect(),
        sizes: sample
            .size_trace
            .iter()
            .map(|&s| (s as f64).clamp(-SIZE_CAP, SIZE_CAP) / SIZE_CAP)
            .collect(),
        intervals: sample.interval_trace.iter().map(|&t| t.ln_1p() / log_cap).collect(),
        label: sample.label,
        domain: sample.domain,
    }
}
