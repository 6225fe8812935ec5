//! Classic libpcap file reader (no pcapng).

use std::path::Path;

use crate::error::{Error, Result};

pub const LINKTYPE_ETHERNET: u32 = 1;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampResolution {
    Micro,
    Nano,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcapPacket {
    /// Seconds since the epoch.
    pub timestamp: f64,
    /// Captured bytes; may be shorter than `orig_len` when the snaplen cut it.
    pub data: Vec<u8>,
    pub orig_len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcapCapture {
    pub link_type: u32,
    pub snaplen: u32,
    pub resolution: TimestampResolution,
    pub packets: Vec<PcapPacket>,
}

fn read_u32(bytes: &[u8], endian: Endian) -> u32 {
    let arr: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    match endian {
        Endian::Little => u32::from_le_bytes(arr),
        Endian::Big => u32::from_be_bytes(arr),
    }
}

pub fn parse_pcap_bytes(bytes: &[u8]) -> Result<PcapCapture> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(Error::Pcap(format!(
            "global header needs {GLOBAL_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let magic = u32::from_le_bytes(bytes[..4].try_into().unwrap());
    let (endian, resolution) = match magic {
        0xa1b2_c3d4 => (Endian::Little, TimestampResolution::Micro),
        0xd4c3_b2a1 => (Endian::Big, TimestampResolution::Micro),
        0xa1b2_3c4d => (Endian::Little, TimestampResolution::Nano),
        0x4d3c_b2a1 => (Endian::Big, TimestampResolution::Nano),
        other => return Err(Error::Pcap(format!("unknown magic {other:#010x}"))),
    };
    let snaplen = read_u32(&bytes[16..], endian);
    let link_type = read_u32(&bytes[20..], endian);
    let frac_scale = match resolution {
        TimestampResolution::Micro => 1e-6,
        TimestampResolution::Nano => 1e-9,
    };

    let mut packets = Vec::new();
    let mut at = GLOBAL_HEADER_LEN;
    while at < bytes.len() {
        if bytes.len() - at < RECORD_HEADER_LEN {
            return Err(Error::Pcap(format!("truncated record header at offset {at}")));
        }
        let ts_sec = read_u32(&bytes[at..], endian);
        let ts_frac = read_u32(&bytes[at + 4..], endian);
        let incl_len = read_u32(&bytes[at + 8..], endian) as usize;
        let orig_len = read_u32(&bytes[at + 12..], endian);
        at += RECORD_HEADER_LEN;
        if bytes.len() - at < incl_len {
            return Err(Error::Pcap(format!(
                "record at offset {} claims {incl_len} bytes, only {} remain",
                at - RECORD_HEADER_LEN,
                bytes.len() - at
            )));
        }
        packets.push(PcapPacket {
            timestamp: ts_sec as f64 + ts_frac as f64 * frac_scale,
            data: bytes[at..at + incl_len].to_vec(),
            orig_len,
        });
        at += incl_len;
    }
    Ok(PcapCapture {
        link_type,
        snaplen,
        resolution,
        packets,
    })
}

pub fn parse_pcap(path: impl AsRef<Path>) -> Result<PcapCapture> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pcap_bytes(&bytes)
}

/// Minimal writer used to build fixtures and by tools that re-emit captures.
pub fn write_pcap_bytes(
    packets: &[PcapPacket],
    link_type: u32,
    resolution: TimestampResolution,
    big_endian: bool,
) -> Vec<u8> {
    let put = |out: &mut Vec<u8>, v: u32| {
        if big_endian {
            out.extend_from_slice(&v.to_be_bytes());
        } else {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    let put16 = |out: &mut Vec<u8>, v: u16| {
        if big_endian {
            out.extend_from_slice(&v.to_be_bytes());
        } else {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    let mut out = Vec::new();
    let magic = match resolution {
        TimestampResolution::Micro => 0xa1b2_c3d4u32,
        TimestampResolution::Nano => 0xa1b2_3c4d,
    };
    put(&mut out, magic);
    put16(&mut out, 2);
    put16(&mut out, 4);
    put(&mut out, 0);
    put(&mut out, 0);
    put(&mut out, 65535);
    put(&mut out, link_type);
    let per_sec = match resolution {
        TimestampResolution::Micro => 1e6,
        TimestampResolution::Nano => 1e9,
    };
    for p in packets {
        let secs = p.timestamp.floor();
        let frac = ((p.timestamp - secs) * per_sec).round() as u32;
        put(&mut out, secs as u32);
        put(&mut out, frac);
        put(&mut out, p.data.len() as u32);
        put(&mut out, p.orig_len);
        out.extend_from_slice(&p.data);
    }
    out
}
