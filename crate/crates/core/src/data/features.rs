//! Per-flow feature extraction: byte grid, signed size trace, interval trace.

use super::flow::Flow;
use super::{FlowSample, BYTE_GRID_LEN, GRID_PACKETS, GRID_ROW_LEN, HEADER_BYTES, PAYLOAD_BYTES, TRACE_LEN};
use crate::error::{Error, Result};

/// IPv4 source and destination address bytes.
pub const IP_ADDR_OFFSETS: std::ops::Range<usize> = 12..20;
/// Source and destination ports, relative to the transport header.
pub const PORT_OFFSETS: std::ops::Range<usize> = 0..4;

/// Header bytes with addresses and ports zero-filled in place.
pub fn masked_headers(headers: &[u8], transport_offset: usize) -> Vec<u8> {
    let mut out = headers.to_vec();
    for i in IP_ADDR_OFFSETS {
        if let Some(b) = out.get_mut(i) {
            *b = 0;
        }
    }
    for i in PORT_OFFSETS {
        if let Some(b) = out.get_mut(transport_offset + i) {
            *b = 0;
        }
    }
    out
}

pub fn extract_features(flow: &Flow, label: usize, domain: usize) -> Result<FlowSample> {
    let first = flow
        .packets
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot extract features from an empty flow".into()))?;
    let initiator = first.src;

    let mut byte_grid = vec![0u8; BYTE_GRID_LEN];
    for (row, pkt) in flow.packets.iter().take(GRID_PACKETS).enumerate() {
        let base = row * GRID_ROW_LEN;
        let headers = masked_headers(&pkt.headers, pkt.transport_offset);
        let h = headers.len().min(HEADER_BYTES);
        byte_grid[base..base + h].copy_from_slice(&headers[..h]);
        let p = pkt.payload.len().min(PAYLOAD_BYTES);
        byte_grid[base + HEADER_BYTES..base + HEADER_BYTES + p].copy_from_slice(&pkt.payload[..p]);
    }

    let mut size_trace = vec![0i32; TRACE_LEN];
    let mut interval_trace = vec![0f64; TRACE_LEN];
    let mut prev_ts = first.timestamp;
    for (i, pkt) in flow.packets.iter().take(TRACE_LEN).enumerate() {
        let sign = if pkt.src == initiator { 1 } else { -1 };
        size_trace[i] = sign * pkt.ip_len as i32;
        if i > 0 {
            interval_trace[i] = (pkt.timestamp - prev_ts).max(0.0);
        }
        prev_ts = pkt.timestamp;
    }

    Ok(FlowSample {
        byte_grid,
        size_trace,
        interval_trace,
        label,
        domain,
    })
}
