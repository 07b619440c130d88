//! S1-U data plane framing: outer IPv4 / UDP / GTPv1-U.
//!
//! Only the mandatory 8-byte GTPv1-U header is produced or accepted. The
//! E, S and PN option flags must be clear, so there are no sequence numbers
//! or extension headers on the wire.

pub mod ipv4;

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ipv4::{inner_five_tuple, FiveTuple};
use ipv4::{Ipv4View, IPV4_HEADER_LEN, PROTO_SCTP, PROTO_UDP, UDP_HEADER_LEN};

/// Registered UDP port for GTP-U.
pub const GTPU_PORT: u16 = 2152;
pub const GTPU_HEADER_LEN: usize = 8;
/// Version 1, protocol type GTP, no E/S/PN flags.
pub const GTPU_FLAGS: u8 = 0x30;
/// Largest UDP payload that fits an IPv4 datagram.
pub const MAX_UDP_PAYLOAD: usize = 65507;
pub const MAX_INNER_LEN: usize = MAX_UDP_PAYLOAD - GTPU_HEADER_LEN;

const OUTER_OVERHEAD: usize = IPV4_HEADER_LEN + UDP_HEADER_LEN + GTPU_HEADER_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageType {
    GPdu,
    EndMarker,
}

impl MessageType {
    pub const G_PDU: u8 = 0xff;
    pub const END_MARKER: u8 = 0xfe;

    pub fn to_u8(self) -> u8 {
        match self {
            MessageType::GPdu => Self::G_PDU,
            MessageType::EndMarker => Self::END_MARKER,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            Self::G_PDU => Some(MessageType::GPdu),
            Self::END_MARKER => Some(MessageType::EndMarker),
            _ => None,
        }
    }
}

/// A decoded GTPv1-U packet together with its outer addressing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtpuPacket {
    pub outer_src: Ipv4Addr,
    pub outer_dst: Ipv4Addr,
    pub teid: u32,
    pub message_type: MessageType,
    /// The tunnelled IPv4 packet; may be empty for an end marker.
    #[serde(with = "crate::util::hex_bytes")]
    pub inner: Vec<u8>,
}

impl GtpuPacket {
    pub fn g_pdu(outer_src: Ipv4Addr, outer_dst: Ipv4Addr, teid: u32, inner: Vec<u8>) -> Self {
        Self { outer_src, outer_dst, teid, message_type: MessageType::GPdu, inner }
    }

    pub fn end_marker(outer_src: Ipv4Addr, outer_dst: Ipv4Addr, teid: u32) -> Self {
        Self { outer_src, outer_dst, teid, message_type: MessageType::EndMarker, inner: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("inner payload of {len} bytes exceeds the {max}-byte limit")]
    Oversize { len: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated {layer} header: need {needed} bytes, have {got}")]
    Truncated { layer: &'static str, needed: usize, got: usize },
    #[error("not an IPv4 packet (version {0})")]
    NotIpv4(u8),
    #[error("inconsistent IPv4 lengths (header {header_len}, total {total_len})")]
    BadIpv4Length { header_len: usize, total_len: usize },
    #[error("IPv4 header checksum mismatch")]
    Checksum,
    #[error("outer protocol {0} is not UDP")]
    NotUdp(u8),
    #[error("UDP destination port {0} is not GTP-U")]
    NotGtpPort(u16),
    #[error("GTP version {0} is not 1")]
    Version(u8),
    #[error("GTP protocol-type bit is clear (GTP')")]
    ProtocolType,
    #[error("unsupported GTP option flags {0:#04x}")]
    OptionFlags(u8),
    #[error("unsupported GTP message type {0}")]
    MessageType(u8),
    #[error("{layer} length field says {declared}, packet carries {actual}")]
    LengthMismatch { layer: &'static str, declared: usize, actual: usize },
}

/// Frames `pkt` as outer IPv4 + UDP (port 2152 both ways, checksum 0) + GTPv1-U.
pub fn encode_gtpu(pkt: &GtpuPacket) -> Result<Vec<u8>, EncodeError> {
    let len = pkt.inner.len();
    if len > MAX_INNER_LEN {
        return Err(EncodeError::Oversize { len, max: MAX_INNER_LEN });
    }
    let mut gtp = Vec::with_capacity(GTPU_HEADER_LEN + len);
    gtp.push(GTPU_FLAGS);
    gtp.push(pkt.message_type.to_u8());
    gtp.extend_from_slice(&(len as u16).to_be_bytes());
    gtp.extend_from_slice(&pkt.teid.to_be_bytes());
    gtp.extend_from_slice(&pkt.inner);
    let udp = ipv4::udp_segment(GTPU_PORT, GTPU_PORT, &gtp);
    Ok(ipv4::build_ipv4(pkt.outer_src, pkt.outer_dst, PROTO_UDP, &udp))
}

/// Parses outer IPv4 + UDP + GTPv1-U. Either every field is read or an error
/// is returned.
pub fn decode_gtpu(bytes: &[u8]) -> Result<GtpuPacket, DecodeError> {
    let ip = Ipv4View::parse(bytes)?;
    if !ip.checksum_ok() {
        return Err(DecodeError::Checksum);
    }
    if ip.protocol() != PROTO_UDP {
        return Err(DecodeError::NotUdp(ip.protocol()));
    }
    let udp = ip.payload();
    if udp.len() < UDP_HEADER_LEN {
        return Err(DecodeError::Truncated { layer: "udp", needed: UDP_HEADER_LEN, got: udp.len() });
    }
    let dst_port = u16::from_be_bytes([udp[2], udp[3]]);
    if dst_port != GTPU_PORT {
        return Err(DecodeError::NotGtpPort(dst_port));
    }
    let udp_len = usize::from(u16::from_be_bytes([udp[4], udp[5]]));
    if udp_len != udp.len() {
        return Err(DecodeError::LengthMismatch { layer: "udp", declared: udp_len, actual: udp.len() });
    }
    let gtp = &udp[UDP_HEADER_LEN..];
    if gtp.len() < GTPU_HEADER_LEN {
        return Err(DecodeError::Truncated { layer: "gtp", needed: GTPU_HEADER_LEN, got: gtp.len() });
    }
    let flags = gtp[0];
    let version = flags >> 5;
    if version != 1 {
        return Err(DecodeError::Version(version));
    }
    if flags & 0x10 == 0 {
        return Err(DecodeError::ProtocolType);
    }
    if flags & 0x0f != 0 {
        return Err(DecodeError::OptionFlags(flags & 0x0f));
    }
    let message_type = MessageType::from_u8(gtp[1]).ok_or(DecodeError::MessageType(gtp[1]))?;
    let declared = usize::from(u16::from_be_bytes([gtp[2], gtp[3]]));
    let inner = &gtp[GTPU_HEADER_LEN..];
    if declared != inner.len() {
        return Err(DecodeError::LengthMismatch { layer: "gtp", declared, actual: inner.len() });
    }
    Ok(GtpuPacket {
        outer_src: ip.src(),
        outer_dst: ip.dst(),
        teid: u32::from_be_bytes([gtp[4], gtp[5], gtp[6], gtp[7]]),
        message_type,
        inner: inner.to_vec(),
    })
}

/// Where a frame entered the gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    FromRan,
    FromCore,
    FromCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PacketClass {
    /// SCTP over IPv4, i.e. S1AP signalling.
    ControlPlane,
    UpstreamGtp,
    DownstreamGtp,
    EndMarker,
    PlainIp,
}

/// Assigns exactly one class to any byte sequence. Frames that fail to parse
/// fall through to `PlainIp`.
pub fn classify(bytes: &[u8], direction: Direction) -> PacketClass {
    match decode_gtpu(bytes) {
        Ok(pkt) => match pkt.message_type {
            MessageType::EndMarker => PacketClass::EndMarker,
            MessageType::GPdu if direction == Direction::FromRan => PacketClass::UpstreamGtp,
            MessageType::GPdu => PacketClass::DownstreamGtp,
        },
        Err(_) => match Ipv4View::parse(bytes) {
            Ok(ip) if ip.protocol() == PROTO_SCTP => PacketClass::ControlPlane,
            _ => PacketClass::PlainIp,
        },
    }
}

/// Total frame length for a given inner length.
pub fn framed_len(inner_len: usize) -> usize {
    OUTER_OVERHEAD + inner_len
}
