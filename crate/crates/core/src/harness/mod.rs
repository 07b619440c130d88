//! A single-threaded virtual network: UEs, eNBs, a combined SGW/MME stub,
//! gateways and DIP echo servers exchanging byte frames over links with a
//! fixed latency in logical ticks.
//!
//! Operations inject the first frame of a procedure and run the fabric until
//! it is idle. Every node action lands in one totally ordered trace.

mod scenario;
mod topology;
mod trace;

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::control::{apply_effects, classify_handover, Effect, HandoverScenario, S1apProcessor};
use crate::gtp::ipv4::{build_ipv4, build_tcp, build_udp, Ipv4View, PROTO_SCTP, PROTO_TCP, PROTO_UDP, TCP_HEADER_LEN, UDP_HEADER_LEN};
use crate::gtp::{decode_gtpu, encode_gtpu, inner_five_tuple, FiveTuple, GtpuPacket, MessageType};
use crate::s1ap::{decode_message, encode_message, BearerItem, MessageKind, S1apLiteMessage};
use crate::steering::{ControllerEvent, Egress, ForwardAction, Ingress, MegwId, SteeringPipeline};

pub use scenario::{add_named_checks, named_script, run_named, run_script, ScenarioReport, ScenarioStep, StepOutcome, SCENARIOS};
pub use topology::{build_topology, ConfigError, CoreSpec, DipSpec, EnbSpec, MegwSpec, Topology, TopologyConfig, UeSpec};
pub use trace::{read_ldjson, write_ldjson, Action, TraceEvent, TraceExt};

const FIRST_UPSTREAM_TEID: u32 = 100;
const FIRST_DOWNSTREAM_TEID: u32 = 200;
const SERVICE_PORT: u16 = 80;
/// Upper bound on deliveries per operation; a healthy fabric needs a few dozen.
const MAX_DELIVERIES: usize = 100_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown {what} {name}")]
    Unknown { what: &'static str, name: String },
    #[error("UE {0} is not attached")]
    NotAttached(String),
    #[error("UE {ue} has no bearer {bearer}")]
    NoBearer { ue: String, bearer: u8 },
    #[error("flow of UE {ue} on bearer {bearer} has not reached a DIP yet")]
    NoFlow { ue: String, bearer: u8 },
    #[error("eNB {0} is already serving the UE")]
    SameEnb(String),
    #[error("{0}")]
    Topology(#[from] crate::control::TopologyError),
    #[error("fabric did not go idle after {0} deliveries")]
    Livelock(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
enum X2Message {
    HandoverRequest { ue: String, source: String, bearers: BTreeMap<u8, u32> },
    HandoverAck { ue: String, target: String },
}

#[derive(Debug, Clone)]
enum Port {
    Megw {
        id: MegwId,
        ingress: Ingress,
    },
    /// eNB, core side.
    Enb {
        id: String,
    },
    /// eNB, radio side: an inner packet from a UE on one bearer.
    Radio {
        enb: String,
        ue: String,
        bearer: u8,
    },
    X2 {
        enb: String,
        msg: X2Message,
    },
    Ue {
        id: String,
        teid: u32,
    },
    Dip {
        id: String,
    },
    Core,
}

impl Port {
    fn label(&self) -> String {
        match self {
            Port::Megw { id, ingress } => match ingress {
                Ingress::Peer(p) => format!("{id}/peer:{p}"),
                other => {
                    format!("{id}/{}", serde_json::to_value(other).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default())
                }
            },
            Port::Enb { id } => id.clone(),
            Port::Radio { enb, .. } => format!("{enb}/radio"),
            Port::X2 { enb, .. } => format!("{enb}/x2"),
            Port::Ue { id, .. } => id.clone(),
            Port::Dip { id } => id.clone(),
            Port::Core => "core".into(),
        }
    }
}

#[derive(Debug)]
struct Delivery {
    port: Port,
    bytes: Vec<u8>,
}

struct MegwNode {
    pipeline: SteeringPipeline,
    processor: S1apProcessor,
}

#[derive(Debug, Default)]
struct EnbNode {
    /// UE -> bearer -> (upstream, downstream) TEIDs.
    ues: BTreeMap<String, BTreeMap<u8, (u32, u32)>>,
    by_downstream: HashMap<u32, (String, u8)>,
}

#[derive(Debug, Clone)]
struct CoreUe {
    enb: String,
    mme_ue_id: u32,
    enb_ue_id: u32,
    /// bearer -> (upstream, downstream once known)
    bearers: BTreeMap<u8, (u32, Option<u32>)>,
    /// Target eNB and its downstream TEIDs, between path switch request and
    /// the end markers.
    pending: Option<(String, BTreeMap<u8, u32>)>,
}

#[derive(Debug, Clone)]
struct UeState {
    spec: UeSpec,
    enb: String,
    attached: bool,
}

#[derive(Debug, Clone, Default)]
struct FlowState {
    port: u16,
    vip: Option<Ipv4Addr>,
    dip: Option<String>,
}

/// Result of one upstream request and its echo.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeOutcome {
    pub ue: String,
    pub bearer: u8,
    pub five_tuple: FiveTuple,
    /// DIP node that received the request.
    pub dip: Option<String>,
    /// Gateway owning that DIP.
    pub serving: Option<MegwId>,
    /// TEID of the tunnel the echo arrived in.
    pub echo_teid: Option<u32>,
    pub echo_payload: Option<String>,
    /// Downstream TEID the core pairs with the bearer's upstream TEID.
    pub expected_teid: Option<u32>,
    pub trace: Vec<TraceEvent>,
}

impl EdgeOutcome {
    pub fn failures(&self, payload: &str) -> Vec<String> {
        let mut f = Vec::new();
        if self.dip.is_none() {
            f.push(format!("request of {} bearer {} reached no DIP", self.ue, self.bearer));
        }
        if self.echo_teid.is_none() || self.echo_teid != self.expected_teid {
            f.push(format!("echo TEID {:?}, expected {:?}", self.echo_teid, self.expected_teid));
        }
        if self.echo_payload.as_deref() != Some(payload) {
            f.push(format!("echo payload {:?}, expected {payload:?}", self.echo_payload));
        }
        f
    }
}

/// A downstream packet pushed from the flow's DIP toward the UE.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeOutcome {
    pub bearer: u8,
    pub delivered_teid: Option<u32>,
    pub dropped: bool,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowHandover {
    pub bearer: u8,
    pub dip_before: Option<String>,
    pub dip_after: Option<String>,
    pub serving_before: Option<MegwId>,
    pub serving_after: Option<MegwId>,
    pub window_probe: Option<ProbeOutcome>,
    pub resumed: EdgeOutcome,
    pub probe_after: Option<ProbeOutcome>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HandoverOutcome {
    pub ue: String,
    pub ue_ip: Ipv4Addr,
    pub old_enb: String,
    pub new_enb: String,
    pub scenario: HandoverScenario,
    pub flows: Vec<FlowHandover>,
    pub trace: Vec<TraceEvent>,
}

impl HandoverOutcome {
    fn ue_events(&self, action: Action) -> Vec<&TraceEvent> {
        let ip = self.ue_ip.to_string();
        self.trace.iter().filter(|e| e.action == action && e.str_field("ue_ip") == Some(ip.as_str())).collect()
    }

    /// Checks the scenario's expected behaviour; empty when everything holds.
    pub fn failures(&self) -> Vec<String> {
        let mut f = Vec::new();
        let silenced = self.ue_events(Action::Silenced);
        let reactivated = self.ue_events(Action::Reactivated);
        let notices = self.ue_events(Action::MigrationNotified);
        match (silenced.first(), reactivated.first()) {
            (Some(s), Some(r)) if s.step < r.step => {
                let window = s.step..r.step;
                let leaked =
                    self.trace.iter().filter(|e| window.contains(&e.step) && e.action == Action::Received && e.node == self.ue).count();
                if leaked > 0 {
                    f.push(format!("{leaked} downstream packets reached the UE during the silent period"));
                }
            }
            (s, r) => f.push(format!("Silenced at {:?} does not precede Reactivated at {:?}", s.map(|e| e.step), r.map(|e| e.step))),
        }
        for flow in &self.flows {
            let b = flow.bearer;
            match &flow.window_probe {
                Some(p) if p.dropped && p.delivered_teid.is_none() => {}
                Some(_) => f.push(format!("bearer {b}: probe inside the silent period was not dropped")),
                None => f.push(format!("bearer {b}: no probe was injected inside the silent period")),
            }
            if self.scenario != HandoverScenario::CrossRegion {
                if flow.dip_before != flow.dip_after {
                    f.push(format!("bearer {b}: DIP moved from {:?} to {:?}", flow.dip_before, flow.dip_after));
                }
                if flow.serving_before != flow.serving_after {
                    f.push(format!("bearer {b}: serving gateway moved from {:?} to {:?}", flow.serving_before, flow.serving_after));
                }
            }
            let expected = flow.resumed.expected_teid;
            if flow.resumed.echo_teid.is_none() || flow.resumed.echo_teid != expected {
                f.push(format!("bearer {b}: echo after handover on TEID {:?}, expected {expected:?}", flow.resumed.echo_teid));
            }
            match &flow.probe_after {
                Some(p) if p.delivered_teid.is_some() && p.delivered_teid == expected => {}
                p => f.push(format!(
                    "bearer {b}: probe after handover delivered on {:?}, expected {expected:?}",
                    p.as_ref().and_then(|p| p.delivered_teid)
                )),
            }
        }
        let want = usize::from(self.scenario == HandoverScenario::CrossRegion);
        if notices.len() != want {
            f.push(format!("{} migration notices for {:?}, expected {want}", notices.len(), self.scenario));
        }
        if let (Some(n), Some(s)) = (notices.first(), silenced.first()) {
            if n.tick != s.tick || n.node != s.node {
                f.push(format!("migration notice at {}@{} but silence started at {}@{}", n.node, n.tick, s.node, s.tick));
            }
        }
        f
    }
}

/// The virtual network.
pub struct Harness {
    topo: Topology,
    megws: BTreeMap<MegwId, MegwNode>,
    enbs: BTreeMap<String, EnbNode>,
    core: BTreeMap<String, CoreUe>,
    ues: BTreeMap<String, UeState>,
    flows: BTreeMap<(String, u8), FlowState>,
    queue: BTreeMap<(u64, u64), Delivery>,
    seq: u64,
    now: u64,
    trace: Vec<TraceEvent>,
    next_upstream: u32,
    next_downstream: u32,
    rng: ChaCha8Rng,
}

fn s1ap_frame(src: Ipv4Addr, dst: Ipv4Addr, msg: &S1apLiteMessage) -> Vec<u8> {
    let body = encode_message(msg).expect("harness builds valid messages");
    build_ipv4(src, dst, PROTO_SCTP, &body)
}

fn l4_payload(packet: &[u8]) -> &[u8] {
    let Ok(ip) = Ipv4View::parse(packet) else { return &[] };
    let l4 = ip.payload();
    let skip = match ip.protocol() {
        PROTO_TCP => TCP_HEADER_LEN,
        PROTO_UDP => UDP_HEADER_LEN,
        _ => 0,
    };
    l4.get(skip..).unwrap_or(&[])
}

/// Summary of a frame for trace details.
fn describe(bytes: &[u8]) -> Value {
    if let Ok(pkt) = decode_gtpu(bytes) {
        return match pkt.message_type {
            MessageType::EndMarker => json!({"kind": "end_marker", "teid": pkt.teid}),
            MessageType::GPdu => json!({
                "kind": "g_pdu",
                "teid": pkt.teid,
                "outer_src": pkt.outer_src,
                "outer_dst": pkt.outer_dst,
                "inner": inner_five_tuple(&pkt.inner).ok(),
            }),
        };
    }
    match Ipv4View::parse(bytes) {
        Ok(ip) if ip.protocol() == PROTO_SCTP => match decode_message(ip.payload()) {
            Ok(m) => json!({"kind": "s1ap", "message": m.kind, "ue_ip": m.ue_ip}),
            Err(e) => json!({"kind": "s1ap", "error": e.to_string()}),
        },
        Ok(_) => json!({"kind": "ip", "flow": inner_five_tuple(bytes).ok()}),
        Err(_) => json!({"kind": "garbage", "len": bytes.len()}),
    }
}

impl Harness {
    pub fn new(topo: Topology) -> Self {
        let megws = topo
            .config
            .megws
            .iter()
            .map(|m| {
                let node = MegwNode {
                    pipeline: SteeringPipeline::new(topo.steering_config(&m.id)),
                    processor: S1apProcessor::new(m.id.clone(), topo.region_map.clone()),
                };
                (m.id.clone(), node)
            })
            .collect();
        let enbs = topo.config.enbs.iter().map(|e| (e.id.clone(), EnbNode::default())).collect();
        let ues =
            topo.config.ues.iter().map(|u| (u.id.clone(), UeState { spec: u.clone(), enb: u.enb.clone(), attached: false })).collect();
        let rng = ChaCha8Rng::seed_from_u64(topo.config.seed);
        Self {
            topo,
            megws,
            enbs,
            core: BTreeMap::new(),
            ues,
            flows: BTreeMap::new(),
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            trace: Vec::new(),
            next_upstream: FIRST_UPSTREAM_TEID,
            next_downstream: FIRST_DOWNSTREAM_TEID,
            rng,
        }
    }

    pub fn from_config(cfg: &TopologyConfig) -> Result<Self, HarnessError> {
        Ok(Self::new(build_topology(cfg)?))
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    /// The whole trace so far.
    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn pipeline(&self, id: &MegwId) -> Option<&SteeringPipeline> {
        self.megws.get(id).map(|m| &m.pipeline)
    }

    pub fn processor(&self, id: &MegwId) -> Option<&S1apProcessor> {
        self.megws.get(id).map(|m| &m.processor)
    }

    /// eNB the UE is currently camped on.
    pub fn ue_enb(&self, ue: &str) -> Option<&str> {
        self.ues.get(ue).map(|u| u.enb.as_str())
    }

    fn record(&mut self, node: &str, action: Action, detail: Value) {
        let step = self.trace.len() as u64;
        self.trace.push(TraceEvent { step, tick: self.now, node: node.to_owned(), action, detail });
    }

    fn send(&mut self, from: &str, port: Port, bytes: Vec<u8>) {
        let frame = match &port {
            Port::X2 { msg, .. } => serde_json::to_value(msg).unwrap_or(Value::Null),
            Port::Radio { .. } | Port::Ue { .. } => json!({"kind": "ip", "flow": inner_five_tuple(&bytes).ok()}),
            _ => describe(&bytes),
        };
        self.record(from, Action::Sent, json!({"to": port.label(), "frame": frame}));
        let at = self.now + self.topo.config.link_latency;
        self.queue.insert((at, self.seq), Delivery { port, bytes });
        self.seq += 1;
    }

    fn run_until_idle(&mut self) -> Result<(), HarnessError> {
        let mut n = 0;
        while let Some(((tick, _), d)) = self.queue.pop_first() {
            self.now = tick;
            self.dispatch(d);
            n += 1;
            if n > MAX_DELIVERIES {
                return Err(HarnessError::Livelock(n));
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, d: Delivery) {
        match d.port {
            Port::Megw { id, ingress } => self.at_megw(&id, &ingress, d.bytes),
            Port::Enb { id } => self.at_enb(&id, d.bytes),
            Port::Radio { enb, ue, bearer } => self.at_radio(&enb, &ue, bearer, d.bytes),
            Port::X2 { enb, msg } => self.at_x2(&enb, msg),
            Port::Ue { id, teid } => {
                let payload = String::from_utf8_lossy(l4_payload(&d.bytes)).into_owned();
                let flow = inner_five_tuple(&d.bytes).ok();
                self.record(&id, Action::Received, json!({"teid": teid, "flow": flow, "payload": payload}));
            }
            Port::Dip { id } => self.at_dip(&id, d.bytes),
            Port::Core => self.at_core(d.bytes),
        }
    }

    fn at_megw(&mut self, id: &MegwId, ingress: &Ingress, bytes: Vec<u8>) {
        let name = id.to_string();
        let Some(node) = self.megws.get(id) else { return };
        let action = node.pipeline.process(&bytes, ingress);
        let leaves: Vec<ForwardAction> = action.leaves().into_iter().cloned().collect();
        for leaf in leaves {
            match leaf {
                ForwardAction::Emit { to, bytes } => self.egress(&name, id, to, bytes),
                ForwardAction::CloneToController { event } => self.deliver_to_controller(&name, id, &event),
                ForwardAction::Drop { reason } => self.record(&name, Action::Dropped, json!({"reason": reason, "frame": describe(&bytes)})),
                ForwardAction::Multiple { .. } => unreachable!("leaves are flat"),
            }
        }
    }

    fn deliver_to_controller(&mut self, name: &str, id: &MegwId, event: &ControllerEvent) {
        let summary = match event {
            ControllerEvent::S1apClone { bytes } => json!({"event": "s1ap_clone", "frame": describe(bytes)}),
            other => serde_json::to_value(other).unwrap_or(Value::Null),
        };
        self.record(name, Action::Cloned, summary);
        let node = self.megws.get_mut(id).expect("caller checked");
        let effects = node.processor.on_event(event);
        if let Err(e) = apply_effects(&effects, node.pipeline.rules()) {
            self.record(name, Action::Note, json!({"effect": "rule_conflict", "error": e.to_string()}));
        }
        for e in effects {
            let action = match &e {
                Effect::InstallRule { .. } => Action::RuleInstalled,
                Effect::SilenceUe { .. } => Action::Silenced,
                Effect::ReactivateUe { .. } => Action::Reactivated,
                Effect::MigrationNotice { .. } => Action::MigrationNotified,
                _ => Action::Note,
            };
            let mut detail = serde_json::to_value(&e).unwrap_or(Value::Null);
            if let Effect::MigrationNotice { notice } = &e {
                detail["ue_ip"] = json!(notice.ue_ip);
            }
            if let Effect::InstallRule { rule } = &e {
                detail["ue_ip"] = json!(rule.key.src_ip);
            }
            self.record(name, action, detail);
        }
    }

    fn egress(&mut self, name: &str, id: &MegwId, to: Egress, bytes: Vec<u8>) {
        let port = match to {
            Egress::Enb(addr) => self.topo.enb_by_addr(addr).map(|e| Port::Enb { id: e.id.clone() }),
            Egress::Peer(peer) => Some(Port::Megw { id: peer, ingress: Ingress::Peer(id.clone()) }),
            Egress::Dip(addr) => self.topo.dip_by_addr(addr).map(|d| Port::Dip { id: d.id.clone() }),
            Egress::Router(addr) => self.route(addr),
        };
        match port {
            Some(port) => self.send(name, port, bytes),
            None => self.record("router", Action::Dropped, json!({"reason": "no_route", "frame": describe(&bytes)})),
        }
    }

    fn route(&self, addr: Ipv4Addr) -> Option<Port> {
        let core = &self.topo.config.core;
        if addr == core.sgw_addr || addr == core.mme_addr {
            return Some(Port::Core);
        }
        if let Some(e) = self.topo.enb_by_addr(addr) {
            return Some(Port::Enb { id: e.id.clone() });
        }
        self.topo.dip_by_addr(addr).map(|d| Port::Dip { id: d.id.clone() })
    }

    fn enb_spec(&self, id: &str) -> EnbSpec {
        self.topo.enb(id).cloned().expect("eNB ids come from the topology")
    }

    fn alloc_downstream(&mut self) -> u32 {
        let t = self.next_downstream;
        self.next_downstream += 1;
        t
    }

    fn at_enb(&mut self, id: &str, bytes: Vec<u8>) {
        if let Ok(pkt) = decode_gtpu(&bytes) {
            if pkt.message_type == MessageType::EndMarker {
                self.record(id, Action::Received, json!({"frame": describe(&bytes)}));
                return;
            }
            let target = self.enbs.get(id).and_then(|e| e.by_downstream.get(&pkt.teid)).cloned();
            match target {
                Some((ue, _)) => {
                    self.record(id, Action::Received, json!({"frame": describe(&bytes)}));
                    self.send(id, Port::Ue { id: ue, teid: pkt.teid }, pkt.inner);
                }
                None => self.record(id, Action::Dropped, json!({"reason": "unknown_teid", "teid": pkt.teid})),
            }
            return;
        }
        let msg = match Ipv4View::parse(&bytes) {
            Ok(ip) if ip.protocol() == PROTO_SCTP => decode_message(ip.payload()),
            _ => {
                self.record(id, Action::Dropped, json!({"reason": "unexpected", "frame": describe(&bytes)}));
                return;
            }
        };
        self.record(id, Action::Received, json!({"frame": describe(&bytes)}));
        let Ok(msg) = msg else { return };
        let Some(ue) = self.ues.values().find(|u| u.spec.ip == msg.ue_ip).map(|u| u.spec.id.clone()) else {
            return;
        };
        if msg.kind == MessageKind::InitialContextSetupRequest {
            let existing = self.enbs[id].ues.get(&ue).cloned().unwrap_or_default();
            let mut bearers = BTreeMap::new();
            for item in &msg.bearers {
                let down = match existing.get(&item.bearer_id) {
                    Some(&(up, down)) if up == item.teid => down,
                    _ => self.alloc_downstream(),
                };
                bearers.insert(item.bearer_id, (item.teid, down));
            }
            self.install_enb_ue(id, &ue, bearers.clone());
            let spec = self.enb_spec(id);
            let reply = S1apLiteMessage {
                kind: MessageKind::InitialContextSetupResponse,
                mme_ue_id: msg.mme_ue_id,
                enb_ue_id: msg.enb_ue_id,
                ue_ip: msg.ue_ip,
                bearers: bearers.iter().map(|(&b, &(_, down))| BearerItem::new(b, down, spec.address)).collect(),
                enb_addr: spec.address,
                sgw_addr: msg.sgw_addr,
            };
            let frame = s1ap_frame(spec.address, self.topo.config.core.mme_addr, &reply);
            self.send(id, Port::Megw { id: spec.megw.clone(), ingress: Ingress::Ran }, frame);
        }
    }

    fn install_enb_ue(&mut self, enb: &str, ue: &str, bearers: BTreeMap<u8, (u32, u32)>) {
        let node = self.enbs.get_mut(enb).expect("known eNB");
        if let Some(old) = node.ues.insert(ue.to_owned(), bearers.clone()) {
            for (_, down) in old.values() {
                node.by_downstream.remove(down);
            }
        }
        for (b, (_, down)) in bearers {
            node.by_downstream.insert(down, (ue.to_owned(), b));
        }
    }

    fn at_radio(&mut self, enb: &str, ue: &str, bearer: u8, inner: Vec<u8>) {
        let up = self.enbs.get(enb).and_then(|n| n.ues.get(ue)).and_then(|b| b.get(&bearer)).map(|&(up, _)| up);
        let Some(up) = up else {
            self.record(enb, Action::Dropped, json!({"reason": "no_bearer", "ue": ue, "bearer": bearer}));
            return;
        };
        let spec = self.enb_spec(enb);
        self.record(enb, Action::Received, json!({"from": ue, "bearer": bearer}));
        let frame = encode_gtpu(&GtpuPacket::g_pdu(spec.address, self.topo.config.core.sgw_addr, up, inner));
        match frame {
            Ok(frame) => self.send(enb, Port::Megw { id: spec.megw, ingress: Ingress::Ran }, frame),
            Err(e) => self.record(enb, Action::Dropped, json!({"reason": e.to_string()})),
        }
    }

    fn at_x2(&mut self, enb: &str, msg: X2Message) {
        self.record(enb, Action::Received, serde_json::to_value(&msg).unwrap_or(Value::Null));
        match msg {
            X2Message::HandoverRequest { ue, source, bearers } => {
                let mut pairs = BTreeMap::new();
                for (b, up) in bearers {
                    let down = self.alloc_downstream();
                    pairs.insert(b, (up, down));
                }
                self.install_enb_ue(enb, &ue, pairs.clone());
                let ack = X2Message::HandoverAck { ue: ue.clone(), target: enb.to_owned() };
                self.send(enb, Port::X2 { enb: source.clone(), msg: ack }, Vec::new());

                // The path switch request is observed by the source side
                // gateway, which holds the UE's context.
                let Some(core_ue) = self.core.get(&ue).cloned() else { return };
                let spec = self.enb_spec(enb);
                let ue_ip = self.ues[&ue].spec.ip;
                let psr = S1apLiteMessage {
                    kind: MessageKind::PathSwitchRequest,
                    mme_ue_id: core_ue.mme_ue_id,
                    enb_ue_id: core_ue.enb_ue_id,
                    ue_ip,
                    bearers: pairs.iter().map(|(&b, &(_, down))| BearerItem::new(b, down, spec.address)).collect(),
                    enb_addr: spec.address,
                    sgw_addr: self.topo.config.core.sgw_addr,
                };
                let frame = s1ap_frame(spec.address, self.topo.config.core.mme_addr, &psr);
                let source_megw = self.enb_spec(&source).megw;
                self.send(enb, Port::Megw { id: source_megw, ingress: Ingress::Ran }, frame);
            }
            X2Message::HandoverAck { ue, target } => {
                if let Some(u) = self.ues.get_mut(&ue) {
                    u.enb = target;
                }
            }
        }
    }

    fn at_dip(&mut self, id: &str, bytes: Vec<u8>) {
        let Ok(flow) = inner_five_tuple(&bytes) else {
            self.record(id, Action::Dropped, json!({"reason": "malformed"}));
            return;
        };
        let payload = l4_payload(&bytes).to_vec();
        self.record(id, Action::Received, json!({"flow": flow, "payload": String::from_utf8_lossy(&payload)}));
        if let Some(key) = self.flow_key(flow.src_ip, flow.proto, flow.src_port) {
            self.flows.get_mut(&key).expect("key from map").dip = Some(id.to_owned());
        }
        let reply = match flow.proto {
            PROTO_TCP => build_tcp(flow.dst_ip, flow.dst_port, flow.src_ip, flow.src_port, &payload),
            PROTO_UDP => build_udp(flow.dst_ip, flow.dst_port, flow.src_ip, flow.src_port, &payload),
            _ => return,
        };
        let megw = self.topo.dip(id).expect("DIP ids come from the topology").megw.clone();
        self.send(id, Port::Megw { id: megw, ingress: Ingress::Cluster }, reply);
    }

    fn flow_key(&self, ue_ip: Ipv4Addr, proto: u8, port: u16) -> Option<(String, u8)> {
        if proto != PROTO_TCP {
            return None;
        }
        let ue = self.ues.values().find(|u| u.spec.ip == ue_ip)?;
        self.flows.iter().find(|((u, _), f)| *u == ue.spec.id && f.port == port).map(|(k, _)| k.clone())
    }

    fn at_core(&mut self, bytes: Vec<u8>) {
        if decode_gtpu(&bytes).is_ok() {
            self.record("sgw", Action::Received, json!({"frame": describe(&bytes)}));
            return;
        }
        let msg = match Ipv4View::parse(&bytes) {
            Ok(ip) if ip.protocol() == PROTO_SCTP => decode_message(ip.payload()),
            _ => {
                self.record("sgw", Action::Received, json!({"frame": describe(&bytes)}));
                return;
            }
        };
        self.record("mme", Action::Received, json!({"frame": describe(&bytes)}));
        let Ok(msg) = msg else { return };
        let Some(ue) = self.ues.values().find(|u| u.spec.ip == msg.ue_ip).map(|u| u.spec.id.clone()) else {
            return;
        };
        let target = self.topo.enb_by_addr(msg.enb_addr).map(|e| e.id.clone());
        let Some(rec) = self.core.get_mut(&ue) else { return };
        match msg.kind {
            MessageKind::InitialContextSetupResponse => {
                for item in &msg.bearers {
                    if let Some(b) = rec.bearers.get_mut(&item.bearer_id) {
                        b.1 = Some(item.teid);
                    }
                }
            }
            MessageKind::PathSwitchRequest => {
                if let Some(target) = target {
                    rec.pending = Some((target, msg.bearers.iter().map(|b| (b.bearer_id, b.teid)).collect()));
                }
            }
            _ => {}
        }
    }

    fn ue_state(&self, ue: &str) -> Result<&UeState, HarnessError> {
        self.ues.get(ue).ok_or_else(|| HarnessError::Unknown { what: "UE", name: ue.to_owned() })
    }

    fn attached_ue(&self, ue: &str) -> Result<&UeState, HarnessError> {
        let u = self.ue_state(ue)?;
        if u.attached {
            Ok(u)
        } else {
            Err(HarnessError::NotAttached(ue.to_owned()))
        }
    }

    /// Attaches a UE at its current eNB: the MME sends the context setup
    /// request, the eNB answers. Re-attaching reuses the TEIDs.
    pub fn run_attach(&mut self, ue: &str) -> Result<Vec<TraceEvent>, HarnessError> {
        let start = self.trace.len();
        let state = self.ue_state(ue)?.clone();
        let enb = self.enb_spec(&state.enb);
        let index = self.ues.keys().position(|k| k == ue).unwrap_or(0) as u32;
        let rec = match self.core.get(ue) {
            Some(rec) if rec.enb == state.enb => rec.clone(),
            prev => {
                let mut bearers = BTreeMap::new();
                for &b in &state.spec.bearers {
                    let up = match prev.and_then(|p| p.bearers.get(&b)) {
                        Some(&(up, _)) => up,
                        None => {
                            self.next_upstream += 1;
                            self.next_upstream - 1
                        }
                    };
                    bearers.insert(b, (up, None));
                }
                CoreUe { enb: state.enb.clone(), mme_ue_id: 1000 + index, enb_ue_id: 1 + index, bearers, pending: None }
            }
        };
        self.core.insert(ue.to_owned(), rec.clone());
        let core = self.topo.config.core.clone();
        let req = S1apLiteMessage {
            kind: MessageKind::InitialContextSetupRequest,
            mme_ue_id: rec.mme_ue_id,
            enb_ue_id: rec.enb_ue_id,
            ue_ip: state.spec.ip,
            bearers: rec.bearers.iter().map(|(&b, &(up, _))| BearerItem::new(b, up, core.sgw_addr)).collect(),
            enb_addr: enb.address,
            sgw_addr: core.sgw_addr,
        };
        let frame = s1ap_frame(core.mme_addr, enb.address, &req);
        self.send("mme", Port::Megw { id: enb.megw.clone(), ingress: Ingress::Core }, frame);
        self.run_until_idle()?;
        self.ues.get_mut(ue).expect("checked").attached = true;
        Ok(self.trace[start..].to_vec())
    }

    /// Sends one request from the UE's first bearer to `vip` and lets the
    /// DIP echo it.
    pub fn run_edge_request(&mut self, ue: &str, vip: Ipv4Addr, payload: &str) -> Result<EdgeOutcome, HarnessError> {
        let bearer = self.ue_state(ue)?.spec.bearers[0];
        self.run_flow(ue, bearer, vip, payload)
    }

    /// Sends one request on a given bearer. Each (UE, bearer) pair owns one
    /// flow with a fixed source port, so repeated calls continue that flow.
    pub fn run_flow(&mut self, ue: &str, bearer: u8, vip: Ipv4Addr, payload: &str) -> Result<EdgeOutcome, HarnessError> {
        let state = self.attached_ue(ue)?.clone();
        if !state.spec.bearers.contains(&bearer) {
            return Err(HarnessError::NoBearer { ue: ue.to_owned(), bearer });
        }
        let start = self.trace.len();
        let key = (ue.to_owned(), bearer);
        if !self.flows.contains_key(&key) {
            let port = loop {
                let p = self.rng.gen_range(32768..61000);
                if !self.flows.values().any(|f| f.port == p) {
                    break p;
                }
            };
            self.flows.insert(key.clone(), FlowState { port, vip: None, dip: None });
        }
        let flow = self.flows.get_mut(&key).expect("inserted");
        flow.vip = Some(vip);
        let port = flow.port;
        let packet = build_tcp(state.spec.ip, port, vip, SERVICE_PORT, payload.as_bytes());
        self.send(ue, Port::Radio { enb: state.enb.clone(), ue: ue.to_owned(), bearer }, packet);
        self.run_until_idle()?;

        let trace = self.trace[start..].to_vec();
        let dip = trace.iter().rfind(|e| e.action == Action::Received && self.topo.dip(&e.node).is_some()).map(|e| e.node.clone());
        let echo = trace.iter().rfind(|e| e.action == Action::Received && e.node == ue);
        let expected_teid = self.core.get(ue).and_then(|r| r.bearers.get(&bearer)).and_then(|b| b.1);
        Ok(EdgeOutcome {
            ue: ue.to_owned(),
            bearer,
            five_tuple: FiveTuple::new(state.spec.ip, vip, PROTO_TCP, port, SERVICE_PORT),
            serving: dip.as_ref().and_then(|d| self.topo.dip(d)).map(|d| d.megw.clone()),
            dip,
            echo_teid: echo.and_then(|e| e.u64_field("teid")).map(|t| t as u32),
            echo_payload: echo.and_then(|e| e.str_field("payload")).map(str::to_owned),
            expected_teid,
            trace,
        })
    }

    /// Pushes an unsolicited downstream packet from the flow's DIP.
    pub fn inject_probe(&mut self, ue: &str, bearer: u8) -> Result<ProbeOutcome, HarnessError> {
        let state = self.ue_state(ue)?.clone();
        let flow = self.flows.get(&(ue.to_owned(), bearer)).cloned();
        let Some(FlowState { port, dip: Some(dip), .. }) = flow else {
            return Err(HarnessError::NoFlow { ue: ue.to_owned(), bearer });
        };
        let spec = self.topo.dip(&dip).cloned().expect("recorded from topology");
        let start = self.trace.len();
        let packet = build_tcp(spec.address, SERVICE_PORT, state.spec.ip, port, b"probe");
        self.send(&dip, Port::Megw { id: spec.megw, ingress: Ingress::Cluster }, packet);
        self.run_until_idle()?;
        let trace = self.trace[start..].to_vec();
        let delivered_teid =
            trace.iter().find(|e| e.action == Action::Received && e.node == ue).and_then(|e| e.u64_field("teid")).map(|t| t as u32);
        let dropped = trace.iter().any(|e| e.action == Action::Dropped);
        Ok(ProbeOutcome { bearer, delivered_teid, dropped, trace })
    }

    /// Replays an X2 handover of `ue` to `new_enb`:
    /// X2 request and acknowledge between the eNBs, path switch request seen
    /// by the source gateway, end markers on the old path, a downstream probe
    /// per flow inside the silent period, the path switch acknowledge through
    /// the target gateway, then a follow-up request and a second probe per
    /// flow.
    pub fn run_x2_handover(&mut self, ue: &str, new_enb: &str) -> Result<HandoverOutcome, HarnessError> {
        let state = self.attached_ue(ue)?.clone();
        let target = self.topo.enb(new_enb).cloned().ok_or_else(|| HarnessError::Unknown { what: "eNB", name: new_enb.to_owned() })?;
        let old_enb = state.enb.clone();
        if old_enb == new_enb {
            return Err(HarnessError::SameEnb(new_enb.to_owned()));
        }
        let source = self.enb_spec(&old_enb);
        let scenario = classify_handover(source.address, target.address, &self.topo.region_map)?;
        let start = self.trace.len();

        let flows: Vec<(u8, FlowState)> =
            self.flows.iter().filter(|((u, _), f)| u == ue && f.dip.is_some()).map(|((_, b), f)| (*b, f.clone())).collect();
        let serving_of = |h: &Self, dip: &Option<String>| dip.as_ref().and_then(|d| h.topo.dip(d)).map(|d| d.megw.clone());

        // steps 1-3
        let bearers = self.enbs[&old_enb].ues.get(ue).map(|b| b.iter().map(|(&id, &(up, _))| (id, up)).collect()).unwrap_or_default();
        let req = X2Message::HandoverRequest { ue: ue.to_owned(), source: old_enb.clone(), bearers };
        self.send(&old_enb, Port::X2 { enb: new_enb.to_owned(), msg: req }, Vec::new());
        self.run_until_idle()?;

        // steps 5-6: end markers on the old path, then the core switches over
        let core = self.topo.config.core.clone();
        let rec = self.core.get(ue).cloned().ok_or_else(|| HarnessError::NotAttached(ue.to_owned()))?;
        for (_, down) in rec.bearers.values() {
            if let Some(down) = down {
                let em = encode_gtpu(&GtpuPacket::end_marker(core.sgw_addr, source.address, *down)).expect("empty payload");
                self.send("sgw", Port::Megw { id: source.megw.clone(), ingress: Ingress::Core }, em);
            }
        }
        self.run_until_idle()?;
        let rec = self.core.get_mut(ue).expect("checked");
        if let Some((enb, downs)) = rec.pending.take() {
            rec.enb = enb;
            for (b, d) in downs {
                if let Some(pair) = rec.bearers.get_mut(&b) {
                    pair.1 = Some(d);
                }
            }
        }
        let rec = rec.clone();

        let mut window = BTreeMap::new();
        for (b, _) in &flows {
            window.insert(*b, self.inject_probe(ue, *b)?);
        }

        // step 8
        let ack = S1apLiteMessage {
            kind: MessageKind::PathSwitchAcknowledge,
            mme_ue_id: rec.mme_ue_id,
            enb_ue_id: rec.enb_ue_id,
            ue_ip: state.spec.ip,
            bearers: rec
                .bearers
                .iter()
                .map(|(&b, &(up, down))| BearerItem {
                    uplink_teid: Some(up),
                    ..BearerItem::new(b, down.unwrap_or_default(), target.address)
                })
                .collect(),
            enb_addr: target.address,
            sgw_addr: core.sgw_addr,
        };
        let frame = s1ap_frame(core.mme_addr, target.address, &ack);
        self.send("mme", Port::Megw { id: target.megw.clone(), ingress: Ingress::Core }, frame);
        self.run_until_idle()?;

        let mut out = Vec::new();
        for (b, before) in flows {
            let vip = before.vip.unwrap_or_else(|| *self.topo.config.vips.iter().next().expect("validated"));
            let resumed = self.run_flow(ue, b, vip, "resume")?;
            let probe_after = Some(self.inject_probe(ue, b)?);
            out.push(FlowHandover {
                bearer: b,
                serving_before: serving_of(self, &before.dip),
                dip_before: before.dip,
                dip_after: resumed.dip.clone(),
                serving_after: resumed.serving.clone(),
                window_probe: window.remove(&b),
                resumed,
                probe_after,
            });
        }
        Ok(HandoverOutcome {
            ue: ue.to_owned(),
            ue_ip: state.spec.ip,
            old_enb,
            new_enb: new_enb.to_owned(),
            scenario,
            flows: out,
            trace: self.trace[start..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harness() -> Harness {
        Harness::from_config(&TopologyConfig::sample()).unwrap()
    }

    const VIP: Ipv4Addr = Ipv4Addr::new(10, 100, 1, 1);

    #[test]
    fn attach_clones_twice_installs_nothing() {
        let mut h = harness();
        let t = h.run_attach("ue-1").unwrap();
        assert_eq!(t.count(Action::Cloned), 2);
        assert_eq!(t.count(Action::RuleInstalled), 0);
        let again = h.run_attach("ue-1").unwrap();
        assert_eq!(again.count(Action::RuleInstalled), 0);
        let ctx = h.processor(&"megw-a".into()).unwrap().context(Ipv4Addr::new(172, 16, 0, 2)).unwrap();
        assert_eq!(ctx.pairs(), vec![(100, 200), (101, 201)]);
    }

    #[test]
    fn first_request_installs_one_rule() {
        let mut h = harness();
        h.run_attach("ue-1").unwrap();
        let out = h.run_edge_request("ue-1", VIP, "hello").unwrap();
        assert_eq!(out.trace.count(Action::RuleInstalled), 1);
        let misses = out.trace.with_action(Action::Cloned).iter().filter(|e| e.str_field("event") == Some("flow_miss")).count();
        assert_eq!(misses, 1);
        assert!(out.failures("hello").is_empty(), "{:?}", out.failures("hello"));
        assert_eq!(out.echo_teid, Some(200));
        let again = h.run_edge_request("ue-1", VIP, "again").unwrap();
        assert_eq!(again.trace.count(Action::RuleInstalled), 0);
        assert_eq!(again.dip, out.dip);
    }

    #[test]
    fn request_before_attach_is_an_error() {
        let mut h = harness();
        assert!(matches!(h.run_edge_request("ue-1", VIP, "x"), Err(HarnessError::NotAttached(_))));
        assert!(matches!(h.run_x2_handover("ue-1", "enb-2"), Err(HarnessError::NotAttached(_))));
    }

    #[test]
    fn handovers_pass_their_checks() {
        for (target, scenario) in [
            ("enb-2", HandoverScenario::SameMegw),
            ("enb-3", HandoverScenario::SameRegionDifferentMegw),
            ("enb-4", HandoverScenario::CrossRegion),
        ] {
            let mut h = harness();
            h.run_attach("ue-1").unwrap();
            h.run_flow("ue-1", 5, VIP, "a").unwrap();
            h.run_flow("ue-1", 6, VIP, "b").unwrap();
            let out = h.run_x2_handover("ue-1", target).unwrap();
            assert_eq!(out.scenario, scenario);
            assert!(out.failures().is_empty(), "{target}: {:#?}", out.failures());
        }
    }

    #[test]
    fn traces_are_deterministic() {
        let run = || {
            let mut h = harness();
            h.run_attach("ue-1").unwrap();
            h.run_flow("ue-1", 5, VIP, "a").unwrap();
            h.run_x2_handover("ue-1", "enb-4").unwrap();
            let mut buf = Vec::new();
            write_ldjson(h.trace(), &mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }
}
