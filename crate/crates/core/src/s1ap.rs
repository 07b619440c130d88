//! A compact stand-in for the four S1AP procedures the gateway listens to.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! u16  length of everything that follows
//! u8   kind (1 = ICS request, 2 = ICS response, 3 = path switch request,
//!           4 = path switch acknowledge)
//! u32  mme_ue_id
//! u32  enb_ue_id
//! [4]  ue_ip
//! [4]  enb_addr
//! [4]  sgw_addr
//! u8   bearer count (>= 1)
//! per bearer:
//!   u8   bearer_id
//!   u32  teid
//!   [4]  transport_addr
//!   u32  uplink_teid        (path switch acknowledge only)
//! ```
//!
//! What `BearerItem::teid` means depends on the kind:
//!
//! | kind                     | `teid`                       | `transport_addr` |
//! |--------------------------|------------------------------|------------------|
//! | InitialContextSetupRequest  | upstream (eNB to SGW)     | SGW              |
//! | InitialContextSetupResponse | downstream (SGW to eNB)   | eNB              |
//! | PathSwitchRequest           | new downstream            | new eNB          |
//! | PathSwitchAcknowledge       | new downstream            | new eNB          |
//!
//! The acknowledge additionally carries the upstream TEID of each bearer so a
//! gateway that never saw the attach can rebuild complete pairs from it alone.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    InitialContextSetupRequest,
    InitialContextSetupResponse,
    PathSwitchRequest,
    PathSwitchAcknowledge,
}

impl MessageKind {
    pub fn to_u8(self) -> u8 {
        match self {
            MessageKind::InitialContextSetupRequest => 1,
            MessageKind::InitialContextSetupResponse => 2,
            MessageKind::PathSwitchRequest => 3,
            MessageKind::PathSwitchAcknowledge => 4,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MessageKind::InitialContextSetupRequest,
            2 => MessageKind::InitialContextSetupResponse,
            3 => MessageKind::PathSwitchRequest,
            4 => MessageKind::PathSwitchAcknowledge,
            _ => return None,
        })
    }

    fn carries_uplink_teid(self) -> bool {
        self == MessageKind::PathSwitchAcknowledge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BearerItem {
    pub bearer_id: u8,
    pub teid: u32,
    pub transport_addr: Ipv4Addr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uplink_teid: Option<u32>,
}

impl BearerItem {
    pub fn new(bearer_id: u8, teid: u32, transport_addr: Ipv4Addr) -> Self {
        Self { bearer_id, teid, transport_addr, uplink_teid: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct S1apLiteMessage {
    pub kind: MessageKind,
    pub mme_ue_id: u32,
    pub enb_ue_id: u32,
    pub ue_ip: Ipv4Addr,
    pub bearers: Vec<BearerItem>,
    pub enb_addr: Ipv4Addr,
    pub sgw_addr: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("message has no bearers")]
    NoBearers,
    #[error("{0} bearers do not fit the one-byte count")]
    TooManyBearers(usize),
    #[error("bearer id {0} appears more than once")]
    DuplicateBearer(u8),
    #[error("bearer {bearer_id}: uplink TEID must be present exactly on path switch acknowledge")]
    UplinkTeid { bearer_id: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated message: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("length prefix says {declared}, message carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown message kind {0:#04x}")]
    UnknownKind(u8),
    #[error("message has no bearers")]
    NoBearers,
    #[error("bearer id {0} appears more than once")]
    DuplicateBearer(u8),
}

const FIXED_LEN: usize = 1 + 4 + 4 + 4 + 4 + 4 + 1;
const ITEM_LEN: usize = 1 + 4 + 4;

fn item_len(kind: MessageKind) -> usize {
    if kind.carries_uplink_teid() {
        ITEM_LEN + 4
    } else {
        ITEM_LEN
    }
}

impl S1apLiteMessage {
    pub fn validate(&self) -> Result<(), EncodeError> {
        if self.bearers.is_empty() {
            return Err(EncodeError::NoBearers);
        }
        if self.bearers.len() > usize::from(u8::MAX) {
            return Err(EncodeError::TooManyBearers(self.bearers.len()));
        }
        let mut seen = BTreeSet::new();
        for b in &self.bearers {
            if !seen.insert(b.bearer_id) {
                return Err(EncodeError::DuplicateBearer(b.bearer_id));
            }
            if b.uplink_teid.is_some() != self.kind.carries_uplink_teid() {
                return Err(EncodeError::UplinkTeid { bearer_id: b.bearer_id });
            }
        }
        Ok(())
    }
}

pub fn encode_message(msg: &S1apLiteMessage) -> Result<Vec<u8>, EncodeError> {
    msg.validate()?;
    let body_len = FIXED_LEN + msg.bearers.len() * item_len(msg.kind);
    let mut out = Vec::with_capacity(2 + body_len);
    out.extend_from_slice(&(body_len as u16).to_be_bytes());
    out.push(msg.kind.to_u8());
    out.extend_from_slice(&msg.mme_ue_id.to_be_bytes());
    out.extend_from_slice(&msg.enb_ue_id.to_be_bytes());
    out.extend_from_slice(&msg.ue_ip.octets());
    out.extend_from_slice(&msg.enb_addr.octets());
    out.extend_from_slice(&msg.sgw_addr.octets());
    out.push(msg.bearers.len() as u8);
    for b in &msg.bearers {
        out.push(b.bearer_id);
        out.extend_from_slice(&b.teid.to_be_bytes());
        out.extend_from_slice(&b.transport_addr.octets());
        if let Some(ul) = b.uplink_teid {
            out.extend_from_slice(&ul.to_be_bytes());
        }
    }
    debug_assert_eq!(out.len(), 2 + body_len);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let end = self.pos + N;
        let slice = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated { needed: end, got: self.buf.len() })?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length checked"))
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take()?))
    }

    fn addr(&mut self) -> Result<Ipv4Addr, DecodeError> {
        Ok(Ipv4Addr::from(self.take::<4>()?))
    }
}

pub fn decode_message(bytes: &[u8]) -> Result<S1apLiteMessage, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let declared = usize::from(u16::from_be_bytes(r.take()?));
    if declared != bytes.len() - 2 {
        return Err(DecodeError::LengthMismatch { declared, actual: bytes.len() - 2 });
    }
    let kind_byte = r.u8()?;
    let kind = MessageKind::from_u8(kind_byte).ok_or(DecodeError::UnknownKind(kind_byte))?;
    let mme_ue_id = r.u32()?;
    let enb_ue_id = r.u32()?;
    let ue_ip = r.addr()?;
    let enb_addr = r.addr()?;
    let sgw_addr = r.addr()?;
    let count = r.u8()?;
    if count == 0 {
        return Err(DecodeError::NoBearers);
    }
    let mut bearers = Vec::with_capacity(usize::from(count));
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let bearer_id = r.u8()?;
        if !seen.insert(bearer_id) {
            return Err(DecodeError::DuplicateBearer(bearer_id));
        }
        let teid = r.u32()?;
        let transport_addr = r.addr()?;
        let uplink_teid = if kind.carries_uplink_teid() { Some(r.u32()?) } else { None };
        bearers.push(BearerItem { bearer_id, teid, transport_addr, uplink_teid });
    }
    if r.pos != bytes.len() {
        return Err(DecodeError::LengthMismatch { declared, actual: r.pos - 2 });
    }
    Ok(S1apLiteMessage { kind, mme_ue_id, enb_ue_id, ue_ip, bearers, enb_addr, sgw_addr })
}
