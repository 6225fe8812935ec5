//! Ethernet/IPv4/TCP/UDP decoding and bidirectional flow assembly.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use serde::Serialize;

use super::pcap::{PcapCapture, LINKTYPE_ETHERNET};
use crate::error::{Error, Result};

pub const IDLE_TIMEOUT_SECS: f64 = 60.0;

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

const ETH_HEADER_LEN: usize = 14;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

/// Direction-independent 5-tuple: the lower `(ip, port)` endpoint comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub ip_a: Ipv4Addr,
    pub port_a: u16,
    pub ip_b: Ipv4Addr,
    pub port_b: u16,
    pub protocol: u8,
}

impl FlowKey {
    pub fn new(src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16), protocol: u8) -> Self {
        let (a, b) = if src <= dst { (src, dst) } else { (dst, src) };
        FlowKey {
            ip_a: a.0,
            port_a: a.1,
            ip_b: b.0,
            port_b: b.1,
            protocol,
        }
    }
}

/// A decoded IPv4 TCP/UDP packet.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPacket {
    pub timestamp: f64,
    pub src: (Ipv4Addr, u16),
    pub dst: (Ipv4Addr, u16),
    pub protocol: u8,
    /// IPv4 total length field.
    pub ip_len: u16,
    /// Raw IPv4 header followed by the transport header, unmasked.
    pub headers: Vec<u8>,
    /// Offset of the transport header inside `headers`.
    pub transport_offset: usize,
    /// Captured transport payload, bounded by the IP total length.
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub key: FlowKey,
    pub packets: Vec<FlowPacket>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlowCounters {
    pub packets: usize,
    pub accepted: usize,
    pub non_ip: usize,
    pub ipv6: usize,
    pub vlan: usize,
    pub non_tcp_udp: usize,
    pub fragments: usize,
    pub malformed: usize,
}

impl FlowCounters {
    /// Adds another capture's counts to these.
    pub fn absorb(&mut self, other: &FlowCounters) {
        self.packets += other.packets;
        self.accepted += other.accepted;
        self.non_ip += other.non_ip;
        self.ipv6 += other.ipv6;
        self.vlan += other.vlan;
        self.non_tcp_udp += other.non_tcp_udp;
        self.fragments += other.fragments;
        self.malformed += other.malformed;
    }
}

enum Decoded {
    Packet(FlowPacket),
    NonIp,
    Ipv6,
    Vlan,
    NonTcpUdp,
    Fragment,
    Malformed,
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn decode_ethernet(timestamp: f64, frame: &[u8]) -> Decoded {
    if frame.len() < ETH_HEADER_LEN {
        return Decoded::Malformed;
    }
    match be16(frame, 12) {
        ETHERTYPE_IPV4 => decode_ipv4(timestamp, &frame[ETH_HEADER_LEN..]),
        ETHERTYPE_IPV6 => Decoded::Ipv6,
        ETHERTYPE_VLAN | ETHERTYPE_QINQ => Decoded::Vlan,
        _ => Decoded::NonIp,
    }
}

fn decode_ipv4(timestamp: f64, ip: &[u8]) -> Decoded {
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return Decoded::Malformed;
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    let total_len = be16(ip, 2) as usize;
    if ihl < 20 || ip.len() < ihl || total_len < ihl {
        return Decoded::Malformed;
    }
    let flags_frag = be16(ip, 6);
    if flags_frag & 0x1fff != 0 || flags_frag & 0x2000 != 0 {
        return Decoded::Fragment;
    }
    let protocol = ip[9];
    let transport_hdr_len = match protocol {
        PROTO_TCP => {
            if ip.len() < ihl + 20 {
                return Decoded::Malformed;
            }
            let off = (ip[ihl + 12] >> 4) as usize * 4;
            if off < 20 {
                return Decoded::Malformed;
            }
            off
        }
        PROTO_UDP => 8,
        _ => return Decoded::NonTcpUdp,
    };
    let headers_end = ihl + transport_hdr_len;
    if ip.len() < headers_end || total_len < headers_end {
        return Decoded::Malformed;
    }
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let src_port = be16(ip, ihl);
    let dst_port = be16(ip, ihl + 2);
    // Ethernet padding past the IP total length is not payload.
    let payload_end = total_len.min(ip.len());
    Decoded::Packet(FlowPacket {
        timestamp,
        src: (src_ip, src_port),
        dst: (dst_ip, dst_port),
        protocol,
        ip_len: total_len as u16,
        headers: ip[..headers_end].to_vec(),
        transport_offset: ihl,
        payload: ip[headers_end..payload_end].to_vec(),
    })
}

/// Groups packets into bidirectional flows in order of first appearance. A
/// gap longer than [`IDLE_TIMEOUT_SECS`] within one key starts a new flow.
pub fn assemble_flows(capture: &PcapCapture) -> Result<(Vec<Flow>, FlowCounters)> {
    if capture.link_type != LINKTYPE_ETHERNET {
        return Err(Error::Pcap(format!(
            "unsupported link type {} (only Ethernet)",
            capture.link_type
        )));
    }
    let mut counters = FlowCounters::default();
    let mut flows: Vec<Flow> = Vec::new();
    let mut active: HashMap<FlowKey, usize> = HashMap::new();
    for raw in &capture.packets {
        counters.packets += 1;
        let pkt = match decode_ethernet(raw.timestamp, &raw.data) {
            Decoded::Packet(p) => p,
            Decoded::NonIp => {
                counters.non_ip += 1;
                continue;
            }
            Decoded::Ipv6 => {
                counters.ipv6 += 1;
                continue;
            }
            Decoded::Vlan => {
                counters.vlan += 1;
                continue;
            }
            Decoded::NonTcpUdp => {
                counters.non_tcp_udp += 1;
                continue;
            }
            Decoded::Fragment => {
                counters.fragments += 1;
                continue;
            }
            Decoded::Malformed => {
                counters.malformed += 1;
                continue;
            }
        };
        counters.accepted += 1;
        let key = FlowKey::new(pkt.src, pkt.dst, pkt.protocol);
        let idx = match active.get(&key) {
            Some(&i)
                if pkt.timestamp - flows[i].packets.last().expect("non-empty flow").timestamp
                    <= IDLE_TIMEOUT_SECS =>
            {
                i
            }
            _ => {
                flows.push(Flow {
                    key,
                    packets: Vec::new(),
                });
                active.insert(key, flows.len() - 1);
                flows.len() - 1
            }
        };
        flows[idx].packets.push(pkt);
    }
    Ok((flows, counters))
}

/// Fields for [`build_frame`].
#[derive(Debug, Clone)]
pub struct FrameSpec {
    pub src: (Ipv4Addr, u16),
    pub dst: (Ipv4Addr, u16),
    pub protocol: u8,
    pub ttl: u8,
    pub ip_id: u16,
    /// TCP sequence number (ignored for UDP).
    pub seq: u32,
    pub tcp_flags: u8,
    pub window: u16,
    pub payload: Vec<u8>,
}

impl FrameSpec {
    pub fn tcp(src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16), payload: Vec<u8>) -> Self {
        FrameSpec {
            src,
            dst,
            protocol: PROTO_TCP,
            ttl: 64,
            ip_id: 1,
            seq: 1000,
            tcp_flags: 0x18,
            window: 502,
            payload,
        }
    }

    pub fn udp(src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16), payload: Vec<u8>) -> Self {
        FrameSpec {
            protocol: PROTO_UDP,
            ..FrameSpec::tcp(src, dst, payload)
        }
    }
}

/// Builds an Ethernet II frame carrying IPv4 and a TCP (20-byte header) or
/// UDP segment. Checksums are left zero.
pub fn build_frame(spec: &FrameSpec) -> Vec<u8> {
    let transport_len = if spec.protocol == PROTO_TCP { 20 } else { 8 };
    let total_len = 20 + transport_len + spec.payload.len();
    let mut f = Vec::with_capacity(14 + total_len);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01, 0x02, 0, 0, 0, 0, 0x02]);
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    f.push(0x45);
    f.push(0);
    f.extend_from_slice(&(total_len as u16).to_be_bytes());
    f.extend_from_slice(&spec.ip_id.to_be_bytes());
    f.extend_from_slice(&[0x40, 0x00]);
    f.push(spec.ttl);
    f.push(spec.protocol);
    f.extend_from_slice(&[0, 0]);
    f.extend_from_slice(&spec.src.0.octets());
    f.extend_from_slice(&spec.dst.0.octets());
    f.extend_from_slice(&spec.src.1.to_be_bytes());
    f.extend_from_slice(&spec.dst.1.to_be_bytes());
    if spec.protocol == PROTO_TCP {
        f.extend_from_slice(&spec.seq.to_be_bytes());
        f.extend_from_slice(&0u32.to_be_bytes());
        f.push(0x50);
        f.push(spec.tcp_flags);
        f.extend_from_slice(&spec.window.to_be_bytes());
        f.extend_from_slice(&[0, 0, 0, 0]);
    } else {
        f.extend_from_slice(&((8 + spec.payload.len()) as u16).to_be_bytes());
        f.extend_from_slice(&[0, 0]);
    }
    f.extend_from_slice(&spec.payload);
    f
}
