//! Line-delimited JSON dataset files.
//!
//! The first line is a header record; every following line is one sample.
//! Byte grids are base64 encoded. Unknown fields are ignored with a warning so
//! newer writers stay readable.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DomainDataset, FlowSample, Provenance, BYTE_GRID_LEN, GRID_PACKETS, GRID_ROW_LEN, TRACE_LEN};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "flowalign-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    format: String,
    version: u32,
    num_classes: usize,
    num_domains: usize,
    grid_packets: usize,
    grid_row_len: usize,
    trace_len: usize,
    samples: usize,
    provenance: Provenance,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    domain: usize,
    label: usize,
    bytes: String,
    sizes: Vec<i32>,
    intervals: Vec<f64>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

pub fn write_dataset(out: &mut impl Write, dataset: &DomainDataset) -> std::io::Result<()> {
    let header = HeaderRecord {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        num_classes: dataset.num_classes,
        num_domains: dataset.num_domains(),
        grid_packets: GRID_PACKETS,
        grid_row_len: GRID_ROW_LEN,
        trace_len: TRACE_LEN,
        samples: dataset.len(),
        provenance: dataset.provenance,
        extra: BTreeMap::new(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for s in dataset.samples() {
        let rec = SampleRecord {
            domain: s.domain,
            label: s.label,
            bytes: B64.encode(&s.byte_grid),
            sizes: s.size_trace.clone(),
            intervals: s.interval_trace.clone(),
            extra: BTreeMap::new(),
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &DomainDataset) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, dataset)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parses a dataset; returns it with any forward-compatibility warnings.
pub fn read_dataset(input: impl BufRead) -> Result<(DomainDataset, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut lines = input.lines().enumerate();
    let bad = |line: usize, reason: String| Error::Dataset { line, reason };

    let (_, first) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
    let first = first.map_err(|e| bad(1, e.to_string()))?;
    let header: HeaderRecord =
        serde_json::from_str(&first).map_err(|e| bad(1, format!("header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(bad(1, format!("unexpected format {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(bad(1, format!("unsupported version {}", header.version)));
    }
    if header.grid_packets != GRID_PACKETS
        || header.grid_row_len != GRID_ROW_LEN
        || header.trace_len != TRACE_LEN
    {
        return Err(bad(
            1,
            format!(
                "feature shape {}x{}/{} differs from {GRID_PACKETS}x{GRID_ROW_LEN}/{TRACE_LEN}",
                header.grid_packets, header.grid_row_len, header.trace_len
            ),
        ));
    }
    for key in header.extra.keys() {
        warnings.push(format!("line 1: ignoring unknown header field {key:?}"));
    }

    let mut samples = Vec::with_capacity(header.samples);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| bad(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| bad(lineno, e.to_string()))?;
        for key in rec.extra.keys() {
            warnings.push(format!("line {lineno}: ignoring unknown field {key:?}"));
        }
        let byte_grid = B64
            .decode(rec.bytes.as_bytes())
            .map_err(|e| bad(lineno, format!("byte grid: {e}")))?;
        if byte_grid.len() != BYTE_GRID_LEN
            || rec.sizes.len() != TRACE_LEN
            || rec.intervals.len() != TRACE_LEN
        {
            return Err(bad(
                lineno,
                format!(
                    "record shape {}/{}/{} does not match header",
                    byte_grid.len(),
                    rec.sizes.len(),
                    rec.intervals.len()
                ),
            ));
        }
        if rec.domain >= header.num_domains || rec.label >= header.num_classes {
            return Err(bad(
                lineno,
                format!("domain {} / label {} outside header ranges", rec.domain, rec.label),
            ));
        }
        samples.push(FlowSample {
            byte_grid,
            size_trace: rec.sizes,
            interval_trace: rec.intervals,
            label: rec.label,
            domain: rec.domain,
        });
    }
    if samples.len() != header.samples {
        return Err(bad(
            0,
            format!("header announces {} samples, found {}", header.samples, samples.len()),
        ));
    }
    let dataset = DomainDataset::from_samples(
        header.num_classes,
        header.num_domains,
        samples,
        header.provenance,
    )
    .map_err(|e| bad(0, e.to_string()))?;
    Ok((dataset, warnings))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DomainDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (ds, warnings) = read_dataset(BufReader::new(file))?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(ds)
}
