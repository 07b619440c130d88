use std::net::Ipv4Addr;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::affinity::{stage2_select, DipAffinityTable};
use super::config::{MegwId, SteeringConfig};
use super::rules::{FlowRule, RuleState, RuleStore};
use super::stage1_select;
use crate::gtp::ipv4::{rewrite_addr, AddrField, Ipv4View, PROTO_SCTP};
use crate::gtp::{decode_gtpu, encode_gtpu, inner_five_tuple, FiveTuple, GtpuPacket, MessageType};

/// Where a frame entered the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ingress {
    /// eNB-facing port.
    Ran,
    /// SGW/MME-facing port.
    Core,
    /// Edge cluster port (DIP traffic).
    Cluster,
    /// Fabric link from another gateway of the region.
    Peer(MegwId),
}

/// Output port of an emitted frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Egress {
    Enb(Ipv4Addr),
    Peer(MegwId),
    Dip(Ipv4Addr),
    /// Ordinary IP routing on the destination address.
    Router(Ipv4Addr),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ControllerEvent {
    S1apClone {
        #[serde(with = "crate::util::hex_bytes")]
        bytes: Vec<u8>,
    },
    EndMarkerSeen {
        teid: u32,
        enb_addr: Ipv4Addr,
    },
    FlowMiss {
        five_tuple: FiveTuple,
        upstream_teid: u32,
        enb_addr: Ipv4Addr,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Malformed,
    SilentPeriod,
    NoCandidate,
    Oversize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ForwardAction {
    Emit {
        to: Egress,
        #[serde(with = "crate::util::hex_bytes")]
        bytes: Vec<u8>,
    },
    CloneToController {
        event: ControllerEvent,
    },
    Drop {
        reason: DropReason,
    },
    Multiple {
        actions: Vec<ForwardAction>,
    },
}

impl ForwardAction {
    /// Combines actions, flattening nested lists; a single action is returned
    /// as is.
    pub fn multiple(actions: impl IntoIterator<Item = ForwardAction>) -> Self {
        let mut flat = Vec::new();
        for a in actions {
            match a {
                ForwardAction::Multiple { actions } => flat.extend(actions),
                other => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            ForwardAction::Multiple { actions: flat }
        }
    }

    /// Leaf actions in order.
    pub fn leaves(&self) -> Vec<&ForwardAction> {
        match self {
            ForwardAction::Multiple { actions } => actions.iter().collect(),
            other => vec![other],
        }
    }

    pub fn emitted(&self) -> Vec<(&Egress, &[u8])> {
        self.leaves()
            .into_iter()
            .filter_map(|a| match a {
                ForwardAction::Emit { to, bytes } => Some((to, bytes.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub fn controller_events(&self) -> Vec<&ControllerEvent> {
        self.leaves()
            .into_iter()
            .filter_map(|a| match a {
                ForwardAction::CloneToController { event } => Some(event),
                _ => None,
            })
            .collect()
    }

    pub fn is_drop(&self) -> bool {
        matches!(self, ForwardAction::Drop { .. })
    }
}

fn emit(to: Egress, bytes: Vec<u8>) -> ForwardAction {
    ForwardAction::Emit { to, bytes }
}

fn clone_event(event: ControllerEvent) -> ForwardAction {
    ForwardAction::CloneToController { event }
}

fn drop(reason: DropReason) -> ForwardAction {
    ForwardAction::Drop { reason }
}

fn route(bytes: &[u8]) -> ForwardAction {
    match Ipv4View::parse(bytes) {
        Ok(ip) => emit(Egress::Router(ip.dst()), bytes.to_vec()),
        Err(_) => drop(DropReason::Malformed),
    }
}

/// Decides what to do with one frame. Pure apart from the affinity table,
/// which gains an entry the first time a flow is balanced.
pub fn process_packet(
    bytes: &[u8],
    ingress: &Ingress,
    cfg: &SteeringConfig,
    rules: &RuleStore,
    affinity: &DipAffinityTable,
) -> ForwardAction {
    match decode_gtpu(bytes) {
        Ok(pkt) => match pkt.message_type {
            MessageType::EndMarker => ForwardAction::multiple([
                emit(Egress::Enb(pkt.outer_dst), bytes.to_vec()),
                clone_event(ControllerEvent::EndMarkerSeen { teid: pkt.teid, enb_addr: pkt.outer_dst }),
            ]),
            MessageType::GPdu if *ingress == Ingress::Ran => upstream(bytes, pkt, cfg, rules, affinity),
            MessageType::GPdu => route(bytes),
        },
        Err(_) => match Ipv4View::parse(bytes) {
            Ok(ip) if ip.protocol() == PROTO_SCTP => ForwardAction::multiple([
                emit(Egress::Router(ip.dst()), bytes.to_vec()),
                clone_event(ControllerEvent::S1apClone { bytes: bytes.to_vec() }),
            ]),
            Ok(ip) => plain(bytes, ip.dst(), ingress, cfg, rules, affinity),
            Err(_) => drop(DropReason::Malformed),
        },
    }
}

fn upstream(bytes: &[u8], pkt: GtpuPacket, cfg: &SteeringConfig, rules: &RuleStore, affinity: &DipAffinityTable) -> ForwardAction {
    let Ok(flow) = inner_five_tuple(&pkt.inner) else {
        return route(bytes);
    };
    if !cfg.is_vip(flow.dst_ip) {
        return route(bytes);
    }
    let miss = || clone_event(ControllerEvent::FlowMiss { five_tuple: flow, upstream_teid: pkt.teid, enb_addr: pkt.outer_src });
    let clone = match rules.get(&flow) {
        Some(FlowRule { state: RuleState::Silent, .. }) => return miss(),
        Some(_) => None,
        None => Some(miss()),
    };
    let serving = match stage1_select(flow.src_ip, cfg) {
        Ok(s) => s,
        Err(_) => return ForwardAction::multiple(clone.into_iter().chain([drop(DropReason::NoCandidate)])),
    };
    let forward =
        if *serving == cfg.megw_id { to_dip(pkt.inner, flow, None, cfg, affinity) } else { emit(Egress::Peer(serving.clone()), pkt.inner) };
    ForwardAction::multiple(clone.into_iter().chain([forward]))
}

fn to_dip(mut inner: Vec<u8>, flow: FiveTuple, via: Option<MegwId>, cfg: &SteeringConfig, affinity: &DipAffinityTable) -> ForwardAction {
    let Ok(dip) = stage2_select(&flow, affinity, cfg) else {
        return drop(DropReason::NoCandidate);
    };
    affinity.note_return_path(&flow, via);
    if rewrite_addr(&mut inner, AddrField::Dst, dip).is_err() {
        return drop(DropReason::Malformed);
    }
    emit(Egress::Dip(dip), inner)
}

fn plain(
    bytes: &[u8],
    dst: Ipv4Addr,
    ingress: &Ingress,
    cfg: &SteeringConfig,
    rules: &RuleStore,
    affinity: &DipAffinityTable,
) -> ForwardAction {
    let Ok(tuple) = inner_five_tuple(bytes) else {
        return route(bytes);
    };
    if cfg.is_vip(dst) {
        let via = match ingress {
            Ingress::Peer(p) if *p != cfg.megw_id => Some(p.clone()),
            _ => None,
        };
        return to_dip(bytes.to_vec(), tuple, via, cfg, affinity);
    }

    let mut bytes = bytes.to_vec();
    let mut tuple = tuple;
    if *ingress == Ingress::Cluster && cfg.is_dip(tuple.src_ip) {
        let vip = match affinity.lookup_reply(&tuple) {
            Some((flow, a)) => {
                if let Some(peer) = a.return_via.filter(|p| *p != cfg.megw_id) {
                    if rewrite_addr(&mut bytes, AddrField::Src, flow.dst_ip).is_err() {
                        return drop(DropReason::Malformed);
                    }
                    return emit(Egress::Peer(peer), bytes);
                }
                Some(flow.dst_ip)
            }
            // no balancing state here: the DIP answers for whichever VIP the
            // flow's rule was installed under
            None => cfg.vips.iter().copied().find(|&v| rules.get(&FiveTuple { src_ip: v, ..tuple }.reversed()).is_some()),
        };
        let Some(vip) = vip else {
            return route(&bytes);
        };
        if rewrite_addr(&mut bytes, AddrField::Src, vip).is_err() {
            return drop(DropReason::Malformed);
        }
        tuple.src_ip = vip;
    }

    match rules.get(&tuple.reversed()) {
        Some(rule) if rule.state == RuleState::Active => {
            match encode_gtpu(&GtpuPacket::g_pdu(rule.sgw_addr, rule.enb_addr, rule.downstream_teid, bytes)) {
                Ok(framed) => emit(Egress::Enb(rule.enb_addr), framed),
                Err(_) => drop(DropReason::Oversize),
            }
        }
        Some(_) => drop(DropReason::SilentPeriod),
        None => route(&bytes),
    }
}

/// One gateway's data plane: configuration plus its tables, safe to drive
/// from many threads while the controller updates rules.
#[derive(Debug)]
pub struct SteeringPipeline {
    cfg: RwLock<Arc<SteeringConfig>>,
    rules: Arc<RuleStore>,
    affinity: DipAffinityTable,
}

impl SteeringPipeline {
    pub fn new(cfg: SteeringConfig) -> Self {
        Self { cfg: RwLock::new(Arc::new(cfg)), rules: Arc::new(RuleStore::new()), affinity: DipAffinityTable::new() }
    }

    pub fn config(&self) -> Arc<SteeringConfig> {
        self.cfg.read().clone()
    }

    /// Swaps in a new configuration, e.g. an edited DIP pool. Existing flows
    /// keep their DIP.
    pub fn set_config(&self, cfg: SteeringConfig) {
        *self.cfg.write() = Arc::new(cfg);
    }

    pub fn rules(&self) -> &Arc<RuleStore> {
        &self.rules
    }

    pub fn affinity(&self) -> &DipAffinityTable {
        &self.affinity
    }

    pub fn megw_id(&self) -> MegwId {
        self.cfg.read().megw_id.clone()
    }

    pub fn process(&self, bytes: &[u8], ingress: &Ingress) -> ForwardAction {
        let cfg = self.config();
        process_packet(bytes, ingress, &cfg, &self.rules, &self.affinity)
    }
}
