//! Minimal IPv4 / TCP / UDP header handling.
//!
//! Only what the gateway needs: building inner packets, reading the 5-tuple,
//! rewriting addresses with checksum fix-up.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::DecodeError;

pub const IPV4_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
pub const TCP_HEADER_LEN: usize = 20;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;
pub const PROTO_SCTP: u8 = 132;

const DEFAULT_TTL: u8 = 64;

/// Connection identity of an inner packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub proto: u8,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FiveTuple {
    pub fn new(src_ip: Ipv4Addr, dst_ip: Ipv4Addr, proto: u8, src_port: u16, dst_port: u16) -> Self {
        let (src_port, dst_port) = if has_ports(proto) { (src_port, dst_port) } else { (0, 0) };
        Self { src_ip, dst_ip, proto, src_port, dst_port }
    }

    /// The same connection seen from the other end.
    pub fn reversed(&self) -> Self {
        Self { src_ip: self.dst_ip, dst_ip: self.src_ip, proto: self.proto, src_port: self.dst_port, dst_port: self.src_port }
    }

    /// Fixed 13-byte big-endian encoding, used as a hash key.
    pub fn key_bytes(&self) -> [u8; 13] {
        let mut out = [0u8; 13];
        out[0..4].copy_from_slice(&self.src_ip.octets());
        out[4..8].copy_from_slice(&self.dst_ip.octets());
        out[8] = self.proto;
        out[9..11].copy_from_slice(&self.src_port.to_be_bytes());
        out[11..13].copy_from_slice(&self.dst_port.to_be_bytes());
        out
    }
}

impl std::fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{} -> {}:{} proto {}", self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.proto)
    }
}

fn has_ports(proto: u8) -> bool {
    proto == PROTO_TCP || proto == PROTO_UDP
}

/// RFC 1071 ones'-complement sum, folded and inverted.
pub fn internet_checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    let mut carry: Option<u8> = None;
    for chunk in chunks {
        for &b in chunk.iter() {
            match carry.take() {
                Some(hi) => sum += u32::from(u16::from_be_bytes([hi, b])),
                None => carry = Some(b),
            }
        }
    }
    if let Some(hi) = carry {
        sum += u32::from(u16::from_be_bytes([hi, 0]));
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// A borrowed, validated view of an IPv4 packet.
#[derive(Debug, Clone, Copy)]
pub struct Ipv4View<'a> {
    bytes: &'a [u8],
    header_len: usize,
    total_len: usize,
}

impl<'a> Ipv4View<'a> {
    /// Validates version, header length and total length. Trailing bytes past
    /// the total length are ignored.
    pub fn parse(bytes: &'a [u8]) -> Result<Self, DecodeError> {
        if bytes.len() < IPV4_HEADER_LEN {
            return Err(DecodeError::Truncated { layer: "ipv4", needed: IPV4_HEADER_LEN, got: bytes.len() });
        }
        let version = bytes[0] >> 4;
        if version != 4 {
            return Err(DecodeError::NotIpv4(version));
        }
        let header_len = usize::from(bytes[0] & 0x0f) * 4;
        let total_len = usize::from(u16::from_be_bytes([bytes[2], bytes[3]]));
        if header_len < IPV4_HEADER_LEN || total_len < header_len {
            return Err(DecodeError::BadIpv4Length { header_len, total_len });
        }
        if bytes.len() < total_len {
            return Err(DecodeError::Truncated { layer: "ipv4", needed: total_len, got: bytes.len() });
        }
        Ok(Self { bytes, header_len, total_len })
    }

    pub fn header_len(&self) -> usize {
        self.header_len
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn protocol(&self) -> u8 {
        self.bytes[9]
    }

    pub fn src(&self) -> Ipv4Addr {
        Ipv4Addr::new(self.bytes[12], self.bytes[13], self.bytes[14], self.bytes[15])
    }

    pub fn dst(&self) -> Ipv4Addr {
        Ipv4Addr::new(self.bytes[16], self.bytes[17], self.bytes[18], self.bytes[19])
    }

    pub fn header(&self) -> &'a [u8] {
        &self.bytes[..self.header_len]
    }

    pub fn payload(&self) -> &'a [u8] {
        &self.bytes[self.header_len..self.total_len]
    }

    /// Header + payload, without trailing padding.
    pub fn packet(&self) -> &'a [u8] {
        &self.bytes[..self.total_len]
    }

    pub fn checksum_ok(&self) -> bool {
        internet_checksum(&[self.header()]) == 0
    }

    fn is_later_fragment(&self) -> bool {
        let frag = u16::from_be_bytes([self.bytes[6], self.bytes[7]]);
        frag & 0x1fff != 0
    }
}

/// Builds an IPv4 packet with a 20-byte header and a correct header checksum.
pub fn build_ipv4(src: Ipv4Addr, dst: Ipv4Addr, proto: u8, payload: &[u8]) -> Vec<u8> {
    let total = IPV4_HEADER_LEN + payload.len();
    debug_assert!(total <= usize::from(u16::MAX));
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&[0x45, 0x00]);
    out.extend_from_slice(&(total as u16).to_be_bytes());
    // identification 0, DF set
    out.extend_from_slice(&[0x00, 0x00, 0x40, 0x00]);
    out.push(DEFAULT_TTL);
    out.push(proto);
    out.extend_from_slice(&[0x00, 0x00]);
    out.extend_from_slice(&src.octets());
    out.extend_from_slice(&dst.octets());
    let csum = internet_checksum(&[&out[..IPV4_HEADER_LEN]]);
    out[10..12].copy_from_slice(&csum.to_be_bytes());
    out.extend_from_slice(payload);
    out
}

fn pseudo_header(src: Ipv4Addr, dst: Ipv4Addr, proto: u8, l4_len: usize) -> [u8; 12] {
    let mut ph = [0u8; 12];
    ph[0..4].copy_from_slice(&src.octets());
    ph[4..8].copy_from_slice(&dst.octets());
    ph[9] = proto;
    ph[10..12].copy_from_slice(&(l4_len as u16).to_be_bytes());
    ph
}

/// A TCP segment (PSH|ACK, no options) inside an IPv4 packet, with both checksums set.
pub fn build_tcp(src: Ipv4Addr, src_port: u16, dst: Ipv4Addr, dst_port: u16, payload: &[u8]) -> Vec<u8> {
    let mut seg = Vec::with_capacity(TCP_HEADER_LEN + payload.len());
    seg.extend_from_slice(&src_port.to_be_bytes());
    seg.extend_from_slice(&dst_port.to_be_bytes());
    seg.extend_from_slice(&1u32.to_be_bytes());
    seg.extend_from_slice(&1u32.to_be_bytes());
    seg.extend_from_slice(&[0x50, 0x18]);
    seg.extend_from_slice(&0xffffu16.to_be_bytes());
    seg.extend_from_slice(&[0, 0, 0, 0]);
    seg.extend_from_slice(payload);
    let ph = pseudo_header(src, dst, PROTO_TCP, seg.len());
    let csum = internet_checksum(&[&ph, &seg]);
    seg[16..18].copy_from_slice(&csum.to_be_bytes());
    build_ipv4(src, dst, PROTO_TCP, &seg)
}

/// A UDP datagram inside an IPv4 packet. The UDP checksum is left at zero.
pub fn build_udp(src: Ipv4Addr, src_port: u16, dst: Ipv4Addr, dst_port: u16, payload: &[u8]) -> Vec<u8> {
    build_ipv4(src, dst, PROTO_UDP, &udp_segment(src_port, dst_port, payload))
}

pub(crate) fn udp_segment(src_port: u16, dst_port: u16, payload: &[u8]) -> Vec<u8> {
    let mut seg = Vec::with_capacity(UDP_HEADER_LEN + payload.len());
    seg.extend_from_slice(&src_port.to_be_bytes());
    seg.extend_from_slice(&dst_port.to_be_bytes());
    seg.extend_from_slice(&((UDP_HEADER_LEN + payload.len()) as u16).to_be_bytes());
    seg.extend_from_slice(&[0, 0]);
    seg.extend_from_slice(payload);
    seg
}

/// ICMP echo request inside an IPv4 packet.
pub fn build_icmp_echo(src: Ipv4Addr, dst: Ipv4Addr, ident: u16, seq: u16, payload: &[u8]) -> Vec<u8> {
    let mut msg = vec![8, 0, 0, 0];
    msg.extend_from_slice(&ident.to_be_bytes());
    msg.extend_from_slice(&seq.to_be_bytes());
    msg.extend_from_slice(payload);
    let csum = internet_checksum(&[&msg]);
    msg[2..4].copy_from_slice(&csum.to_be_bytes());
    build_ipv4(src, dst, PROTO_ICMP, &msg)
}

/// Reads the connection 5-tuple of an IPv4 packet.
///
/// TCP and UDP ports come from the transport header; every other protocol,
/// and non-initial fragments, yield ports 0.
pub fn inner_five_tuple(inner: &[u8]) -> Result<FiveTuple, DecodeError> {
    let ip = Ipv4View::parse(inner)?;
    let proto = ip.protocol();
    if !has_ports(proto) || ip.is_later_fragment() {
        return Ok(FiveTuple::new(ip.src(), ip.dst(), proto, 0, 0));
    }
    let l4 = ip.payload();
    let needed = if proto == PROTO_TCP { TCP_HEADER_LEN } else { UDP_HEADER_LEN };
    if l4.len() < needed {
        let layer = if proto == PROTO_TCP { "tcp" } else { "udp" };
        return Err(DecodeError::Truncated { layer, needed, got: l4.len() });
    }
    let src_port = u16::from_be_bytes([l4[0], l4[1]]);
    let dst_port = u16::from_be_bytes([l4[2], l4[3]]);
    Ok(FiveTuple::new(ip.src(), ip.dst(), proto, src_port, dst_port))
}

/// Which address of the IPv4 header to rewrite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddrField {
    Src,
    Dst,
}

/// Rewrites one address of an IPv4 packet in place and recomputes the IPv4
/// header checksum and, when present, the TCP/UDP checksum.
pub fn rewrite_addr(packet: &mut [u8], field: AddrField, addr: Ipv4Addr) -> Result<(), DecodeError> {
    let (header_len, total_len, proto, later_frag) = {
        let ip = Ipv4View::parse(packet)?;
        (ip.header_len(), ip.total_len(), ip.protocol(), ip.is_later_fragment())
    };
    let off = match field {
        AddrField::Src => 12,
        AddrField::Dst => 16,
    };
    packet[off..off + 4].copy_from_slice(&addr.octets());
    packet[10..12].copy_from_slice(&[0, 0]);
    let csum = internet_checksum(&[&packet[..header_len]]);
    packet[10..12].copy_from_slice(&csum.to_be_bytes());

    if later_frag {
        return Ok(());
    }
    let src = Ipv4Addr::new(packet[12], packet[13], packet[14], packet[15]);
    let dst = Ipv4Addr::new(packet[16], packet[17], packet[18], packet[19]);
    let l4 = &mut packet[header_len..total_len];
    let csum_off = match proto {
        PROTO_TCP if l4.len() >= TCP_HEADER_LEN => 16,
        // a zero UDP checksum means "not computed" and stays zero
        PROTO_UDP if l4.len() >= UDP_HEADER_LEN && l4[6..8] != [0, 0] => 6,
        _ => return Ok(()),
    };
    l4[csum_off..csum_off + 2].copy_from_slice(&[0, 0]);
    let ph = pseudo_header(src, dst, proto, l4.len());
    let mut csum = internet_checksum(&[&ph, l4]);
    if proto == PROTO_UDP && csum == 0 {
        csum = 0xffff;
    }
    l4[csum_off..csum_off + 2].copy_from_slice(&csum.to_be_bytes());
    Ok(())
}
