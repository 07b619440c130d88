//! The per-gateway S1AP processor.
//!
//! The processor never touches the data plane itself. Every input returns a
//! list of [`Effect`]s, which the caller applies (see [`apply_effects`])
//! before feeding the next event. Two processors never share state.

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gtp::ipv4::{Ipv4View, PROTO_SCTP};
use crate::gtp::FiveTuple;
use crate::s1ap::{decode_message, MessageKind, S1apLiteMessage};
use crate::steering::rendezvous::select_index;
use crate::steering::{ConflictError, ControllerEvent, FlowRule, MegwId, RuleState, RuleStore, TeidRemap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HandoverScenario {
    SameMegw,
    SameRegionDifferentMegw,
    CrossRegion,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("eNB {0} is not attached to any gateway")]
    UnknownEnb(Ipv4Addr),
    #[error("gateway {0} belongs to no region")]
    UnknownMegw(MegwId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MegwPlacement {
    pub region: String,
    /// Stage I weight of the gateway within its region.
    pub weight: f64,
}

/// Static view of which eNB hangs off which gateway and how gateways group
/// into regions. Every processor holds its own copy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub enb_to_megw: BTreeMap<Ipv4Addr, MegwId>,
    pub megws: BTreeMap<MegwId, MegwPlacement>,
}

impl RegionMap {
    pub fn megw_of(&self, enb: Ipv4Addr) -> Result<&MegwId, TopologyError> {
        self.enb_to_megw.get(&enb).ok_or(TopologyError::UnknownEnb(enb))
    }

    pub fn region_of(&self, megw: &MegwId) -> Result<&str, TopologyError> {
        self.megws.get(megw).map(|p| p.region.as_str()).ok_or_else(|| TopologyError::UnknownMegw(megw.clone()))
    }

    /// The gateway whose edge cluster serves `ue_ip` inside `region`.
    pub fn serving_in(&self, region: &str, ue_ip: Ipv4Addr) -> Option<&MegwId> {
        let members: Vec<_> = self.megws.iter().filter(|(_, p)| p.region == region).collect();
        let idx = select_index(&ue_ip.octets(), members.iter().map(|(id, p)| (id.as_ref(), p.weight))).ok()?;
        Some(members[idx].0)
    }
}

pub fn classify_handover(old_enb: Ipv4Addr, new_enb: Ipv4Addr, topology: &RegionMap) -> Result<HandoverScenario, TopologyError> {
    let old = topology.megw_of(old_enb)?;
    let new = topology.megw_of(new_enb)?;
    if old == new {
        return Ok(HandoverScenario::SameMegw);
    }
    if topology.region_of(old)? == topology.region_of(new)? {
        Ok(HandoverScenario::SameRegionDifferentMegw)
    } else {
        Ok(HandoverScenario::CrossRegion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BearerContext {
    pub upstream_teid: u32,
    /// Unknown until the eNB answers the context setup.
    pub downstream_teid: Option<u32>,
    pub sgw_addr: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationNotice {
    pub ue_ip: Ipv4Addr,
    pub old_mec: MegwId,
    pub new_mec: MegwId,
    pub issued_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum UePhase {
    /// Request seen, response pending.
    Setup,
    Attached,
    HandoverInProgress {
        old_enb: Ipv4Addr,
        new_enb: Ipv4Addr,
        scenario: HandoverScenario,
        /// Serving gateways before and after, set for cross-region moves.
        migration: Option<(MegwId, MegwId)>,
    },
    SilentPeriod {
        scenario: HandoverScenario,
        /// Old downstream TEID per bearer, kept to re-point existing rules.
        released: BTreeMap<u8, u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UeContext {
    pub ue_ip: Ipv4Addr,
    pub enb_addr: Ipv4Addr,
    pub bearers: BTreeMap<u8, BearerContext>,
    pub phase: UePhase,
}

impl UeContext {
    /// Complete (upstream, downstream) pairs.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        self.bearers.values().filter_map(|b| Some((b.upstream_teid, b.downstream_teid?))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    Attached {
        ue_ip: Ipv4Addr,
        pairs: Vec<(u32, u32)>,
    },
    InstallRule {
        rule: FlowRule,
    },
    HandoverStarted {
        ue_ip: Ipv4Addr,
        old_enb: Ipv4Addr,
        new_enb: Ipv4Addr,
        scenario: HandoverScenario,
    },
    SilenceUe {
        ue_ip: Ipv4Addr,
    },
    ReleasePairs {
        ue_ip: Ipv4Addr,
        pairs: Vec<(u32, u32)>,
    },
    MigrationNotice {
        notice: MigrationNotice,
    },
    ReactivateUe {
        ue_ip: Ipv4Addr,
        enb_addr: Ipv4Addr,
        teid_map: TeidRemap,
    },
    /// Upstream packet of a UE in its silent period.
    SilentClone {
        five_tuple: FiveTuple,
    },
    OrphanMessage {
        kind: MessageKind,
        ue_ip: Ipv4Addr,
    },
    NoContext {
        upstream_teid: u32,
    },
    TopologyError {
        ue_ip: Ipv4Addr,
        reason: String,
    },
    Malformed {
        reason: String,
    },
}

/// An effect with the logical time of the event that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEffect {
    pub at: u64,
    pub megw: MegwId,
    #[serde(flatten)]
    pub effect: Effect,
}

#[derive(Debug)]
pub struct S1apProcessor {
    megw_id: MegwId,
    topology: RegionMap,
    ues: BTreeMap<Ipv4Addr, UeContext>,
    by_upstream: HashMap<u32, (Ipv4Addr, u8)>,
    clock: u64,
}

impl S1apProcessor {
    pub fn new(megw_id: MegwId, topology: RegionMap) -> Self {
        Self { megw_id, topology, ues: BTreeMap::new(), by_upstream: HashMap::new(), clock: 0 }
    }

    pub fn megw_id(&self) -> &MegwId {
        &self.megw_id
    }

    /// Number of events consumed so far.
    pub fn now(&self) -> u64 {
        self.clock
    }

    pub fn context(&self, ue_ip: Ipv4Addr) -> Option<&UeContext> {
        self.ues.get(&ue_ip)
    }

    pub fn contexts(&self) -> impl Iterator<Item = &UeContext> {
        self.ues.values()
    }

    /// Dispatches one data-plane clone.
    pub fn on_event(&mut self, event: &ControllerEvent) -> Vec<Effect> {
        match event {
            ControllerEvent::S1apClone { bytes } => match s1ap_payload(bytes).map(decode_message) {
                Some(Ok(msg)) => self.on_control_message(&msg),
                Some(Err(e)) => self.tick(vec![Effect::Malformed { reason: e.to_string() }]),
                None => self.tick(vec![Effect::Malformed { reason: "not an SCTP packet".into() }]),
            },
            ControllerEvent::EndMarkerSeen { teid, .. } => self.on_end_marker(*teid),
            ControllerEvent::FlowMiss { five_tuple, upstream_teid, .. } => self.on_flow_miss(*five_tuple, *upstream_teid),
        }
    }

    fn tick(&mut self, effects: Vec<Effect>) -> Vec<Effect> {
        self.clock += 1;
        effects
    }

    pub fn on_control_message(&mut self, msg: &S1apLiteMessage) -> Vec<Effect> {
        let effects = match msg.kind {
            MessageKind::InitialContextSetupRequest => self.ics_request(msg),
            MessageKind::InitialContextSetupResponse => self.ics_response(msg),
            MessageKind::PathSwitchRequest => self.path_switch_request(msg),
            MessageKind::PathSwitchAcknowledge => self.path_switch_ack(msg),
        };
        self.tick(effects)
    }

    fn index_bearers(&mut self, ue_ip: Ipv4Addr) {
        self.by_upstream.retain(|_, (ue, _)| *ue != ue_ip);
        if let Some(ctx) = self.ues.get(&ue_ip) {
            for (&id, b) in &ctx.bearers {
                self.by_upstream.insert(b.upstream_teid, (ue_ip, id));
            }
        }
    }

    fn ics_request(&mut self, msg: &S1apLiteMessage) -> Vec<Effect> {
        let bearers = msg
            .bearers
            .iter()
            .map(|b| (b.bearer_id, BearerContext { upstream_teid: b.teid, downstream_teid: None, sgw_addr: b.transport_addr }))
            .collect();
        self.ues.insert(msg.ue_ip, UeContext { ue_ip: msg.ue_ip, enb_addr: msg.enb_addr, bearers, phase: UePhase::Setup });
        self.index_bearers(msg.ue_ip);
        Vec::new()
    }

    fn ics_response(&mut self, msg: &S1apLiteMessage) -> Vec<Effect> {
        let Some(ctx) = self.ues.get_mut(&msg.ue_ip) else {
            return vec![Effect::OrphanMessage { kind: msg.kind, ue_ip: msg.ue_ip }];
        };
        for item in &msg.bearers {
            if let Some(b) = ctx.bearers.get_mut(&item.bearer_id) {
                b.downstream_teid = Some(item.teid);
            }
        }
        ctx.enb_addr = msg.enb_addr;
        ctx.phase = UePhase::Attached;
        vec![Effect::Attached { ue_ip: ctx.ue_ip, pairs: ctx.pairs() }]
    }

    fn path_switch_request(&mut self, msg: &S1apLiteMessage) -> Vec<Effect> {
        let Some(ctx) = self.ues.get(&msg.ue_ip) else {
            return vec![Effect::OrphanMessage { kind: msg.kind, ue_ip: msg.ue_ip }];
        };
        let (old_enb, new_enb) = (ctx.enb_addr, msg.enb_addr);
        let scenario = match classify_handover(old_enb, new_enb, &self.topology) {
            Ok(s) => s,
            Err(e) => return vec![Effect::TopologyError { ue_ip: msg.ue_ip, reason: e.to_string() }],
        };
        let migration = if scenario == HandoverScenario::CrossRegion {
            match self.migration_endpoints(msg.ue_ip, old_enb, new_enb) {
                Ok(m) => Some(m),
                Err(e) => return vec![Effect::TopologyError { ue_ip: msg.ue_ip, reason: e.to_string() }],
            }
        } else {
            None
        };
        let ctx = self.ues.get_mut(&msg.ue_ip).expect("checked above");
        ctx.phase = UePhase::HandoverInProgress { old_enb, new_enb, scenario, migration };
        vec![Effect::HandoverStarted { ue_ip: msg.ue_ip, old_enb, new_enb, scenario }]
    }

    fn migration_endpoints(&self, ue_ip: Ipv4Addr, old_enb: Ipv4Addr, new_enb: Ipv4Addr) -> Result<(MegwId, MegwId), TopologyError> {
        let serving = |enb| -> Result<MegwId, TopologyError> {
            let megw = self.topology.megw_of(enb)?;
            let region = self.topology.region_of(megw)?;
            Ok(self.topology.serving_in(region, ue_ip).cloned().unwrap_or_else(|| megw.clone()))
        };
        Ok((serving(old_enb)?, serving(new_enb)?))
    }

    fn path_switch_ack(&mut self, msg: &S1apLiteMessage) -> Vec<Effect> {
        // The new gateway may never have seen this UE; the acknowledge holds
        // complete pairs, so it is enough to build a context.
        let released = match self.ues.get(&msg.ue_ip).map(|c| &c.phase) {
            Some(UePhase::SilentPeriod { released, .. }) => released.clone(),
            _ => BTreeMap::new(),
        };
        let previous = self.ues.remove(&msg.ue_ip);
        let mut bearers = BTreeMap::new();
        let mut teid_map = TeidRemap::new();
        for item in &msg.bearers {
            let prev = previous.as_ref().and_then(|c| c.bearers.get(&item.bearer_id));
            let upstream_teid = item.uplink_teid.or(prev.map(|b| b.upstream_teid)).unwrap_or_default();
            let sgw_addr = prev.map_or(msg.sgw_addr, |b| b.sgw_addr);
            bearers.insert(item.bearer_id, BearerContext { upstream_teid, downstream_teid: Some(item.teid), sgw_addr });
            if let Some(&old) = released.get(&item.bearer_id) {
                teid_map.insert(old, item.teid);
            }
        }
        self.ues.insert(msg.ue_ip, UeContext { ue_ip: msg.ue_ip, enb_addr: msg.enb_addr, bearers, phase: UePhase::Attached });
        self.index_bearers(msg.ue_ip);
        vec![Effect::ReactivateUe { ue_ip: msg.ue_ip, enb_addr: msg.enb_addr, teid_map }]
    }

    pub fn on_flow_miss(&mut self, five_tuple: FiveTuple, upstream_teid: u32) -> Vec<Effect> {
        let effects = self.flow_miss(five_tuple, upstream_teid);
        self.tick(effects)
    }

    fn flow_miss(&self, five_tuple: FiveTuple, upstream_teid: u32) -> Vec<Effect> {
        let Some(&(ue_ip, bearer_id)) = self.by_upstream.get(&upstream_teid) else {
            return vec![Effect::NoContext { upstream_teid }];
        };
        let ctx = &self.ues[&ue_ip];
        if matches!(ctx.phase, UePhase::SilentPeriod { .. }) {
            return vec![Effect::SilentClone { five_tuple }];
        }
        let bearer = &ctx.bearers[&bearer_id];
        let Some(downstream_teid) = bearer.downstream_teid else {
            return vec![Effect::NoContext { upstream_teid }];
        };
        vec![Effect::InstallRule {
            rule: FlowRule {
                key: five_tuple,
                downstream_teid,
                enb_addr: ctx.enb_addr,
                sgw_addr: bearer.sgw_addr,
                state: RuleState::Active,
            },
        }]
    }

    pub fn on_end_marker(&mut self, teid: u32) -> Vec<Effect> {
        let effects = self.end_marker(teid);
        self.tick(effects)
    }

    fn end_marker(&mut self, teid: u32) -> Vec<Effect> {
        let now = self.clock;
        let Some(ctx) = self
            .ues
            .values_mut()
            .find(|c| matches!(c.phase, UePhase::HandoverInProgress { .. }) && c.bearers.values().any(|b| b.downstream_teid == Some(teid)))
        else {
            return Vec::new();
        };
        let UePhase::HandoverInProgress { scenario, migration, .. } = ctx.phase.clone() else { unreachable!() };
        let pairs = ctx.pairs();
        let released = ctx.bearers.iter_mut().filter_map(|(&id, b)| Some((id, b.downstream_teid.take()?))).collect();
        ctx.phase = UePhase::SilentPeriod { scenario, released };
        let ue_ip = ctx.ue_ip;
        let mut effects = vec![Effect::SilenceUe { ue_ip }, Effect::ReleasePairs { ue_ip, pairs }];
        if let Some((old_mec, new_mec)) = migration {
            effects.push(Effect::MigrationNotice { notice: MigrationNotice { ue_ip, old_mec, new_mec, issued_at: now } });
        }
        effects
    }
}

/// Pulls the S1AP payload out of a cloned SCTP packet. The SCTP common
/// header and chunk framing are not modelled: the payload follows the IPv4
/// header directly.
fn s1ap_payload(bytes: &[u8]) -> Option<&[u8]> {
    let ip = Ipv4View::parse(bytes).ok()?;
    (ip.protocol() == PROTO_SCTP).then(|| ip.payload())
}

/// Applies data-plane effects to a rule store. Other effects are ignored.
pub fn apply_effects(effects: &[Effect], rules: &RuleStore) -> Result<(), ConflictError> {
    for e in effects {
        match e {
            Effect::InstallRule { rule } => {
                rules.install(*rule)?;
            }
            Effect::SilenceUe { ue_ip } => {
                rules.set_ue_silent(*ue_ip);
            }
            Effect::ReactivateUe { ue_ip, enb_addr, teid_map } => {
                rules.reactivate_ue(*ue_ip, *enb_addr, teid_map);
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::s1ap::BearerItem;

    const UE: Ipv4Addr = Ipv4Addr::new(172, 16, 0, 2);
    const SGW: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
    const ENB1: Ipv4Addr = Ipv4Addr::new(192, 168, 10, 1);
    const ENB2: Ipv4Addr = Ipv4Addr::new(192, 168, 10, 2);
    const ENB3: Ipv4Addr = Ipv4Addr::new(192, 168, 20, 1);
    const ENB4: Ipv4Addr = Ipv4Addr::new(192, 168, 30, 1);

    fn topology() -> RegionMap {
        let mut t = RegionMap::default();
        for (enb, megw) in [(ENB1, "megw-a"), (ENB2, "megw-a"), (ENB3, "megw-b"), (ENB4, "megw-c")] {
            t.enb_to_megw.insert(enb, megw.into());
        }
        for (megw, region) in [("megw-a", "A"), ("megw-b", "A"), ("megw-c", "B")] {
            t.megws.insert(megw.into(), MegwPlacement { region: region.into(), weight: 1.0 });
        }
        t
    }

    fn msg(kind: MessageKind, enb: Ipv4Addr, items: &[(u8, u32)]) -> S1apLiteMessage {
        let addr = match kind {
            MessageKind::InitialContextSetupRequest => SGW,
            _ => enb,
        };
        S1apLiteMessage {
            kind,
            mme_ue_id: 1,
            enb_ue_id: 2,
            ue_ip: UE,
            bearers: items.iter().map(|&(id, teid)| BearerItem::new(id, teid, addr)).collect(),
            enb_addr: enb,
            sgw_addr: SGW,
        }
    }

    fn attached(p: &mut S1apProcessor) {
        p.on_control_message(&msg(MessageKind::InitialContextSetupRequest, ENB1, &[(5, 100), (6, 101)]));
        p.on_control_message(&msg(MessageKind::InitialContextSetupResponse, ENB1, &[(5, 200), (6, 201)]));
    }

    fn flow(port: u16) -> FiveTuple {
        FiveTuple::new(UE, Ipv4Addr::new(10, 100, 1, 1), 6, port, 80)
    }

    #[test]
    fn attach_builds_pairs_without_rules() {
        let mut p = S1apProcessor::new("megw-a".into(), topology());
        assert!(p.on_control_message(&msg(MessageKind::InitialContextSetupRequest, ENB1, &[(5, 100)])).is_empty());
        let fx = p.on_control_message(&msg(MessageKind::InitialContextSetupResponse, ENB1, &[(5, 200)]));
        assert_eq!(fx, vec![Effect::Attached { ue_ip: UE, pairs: vec![(100, 200)] }]);
        assert!(!fx.iter().any(|e| matches!(e, Effect::InstallRule { .. })));
    }

    #[test]
    fn response_without_request_is_orphan() {
        let mut p = S1apProcessor::new("megw-a".into(), topology());
        let fx = p.on_control_message(&msg(MessageKind::InitialContextSetupResponse, ENB1, &[(5, 200)]));
        assert!(matches!(fx[..], [Effect::OrphanMessage { .. }]));
        assert!(p.context(UE).is_none());
    }

    #[test]
    fn flow_miss_installs_rule_per_bearer() {
        let mut p = S1apProcessor::new("megw-a".into(), topology());
        attached(&mut p);
        let teid_of = |fx: Vec<Effect>| match &fx[..] {
            [Effect::InstallRule { rule }] => rule.downstream_teid,
            other => panic!("{other:?}"),
        };
        assert_eq!(teid_of(p.on_flow_miss(flow(5000), 100)), 200);
        assert_eq!(teid_of(p.on_flow_miss(flow(5001), 101)), 201);
        assert_eq!(p.on_flow_miss(flow(5002), 999), vec![Effect::NoContext { upstream_teid: 999 }]);
    }

    #[test]
    fn classification() {
        let t = topology();
        assert_eq!(classify_handover(ENB1, ENB2, &t), Ok(HandoverScenario::SameMegw));
        assert_eq!(classify_handover(ENB1, ENB3, &t), Ok(HandoverScenario::SameRegionDifferentMegw));
        assert_eq!(classify_handover(ENB1, ENB4, &t), Ok(HandoverScenario::CrossRegion));
        let stray = Ipv4Addr::new(1, 2, 3, 4);
        assert_eq!(classify_handover(ENB1, stray, &t), Err(TopologyError::UnknownEnb(stray)));
    }

    #[test]
    fn same_megw_handover_remaps_teids() {
        let mut p = S1apProcessor::new("megw-a".into(), topology());
        attached(&mut p);
        p.on_control_message(&msg(MessageKind::PathSwitchRequest, ENB2, &[(5, 100), (6, 101)]));
        let fx = p.on_end_marker(200);
        assert_eq!(fx[0], Effect::SilenceUe { ue_ip: UE });
        assert_eq!(fx[1], Effect::ReleasePairs { ue_ip: UE, pairs: vec![(100, 200), (101, 201)] });
        assert_eq!(fx.len(), 2);
        // a second end marker for the other bearer is a no-op
        assert!(p.on_end_marker(201).is_empty());
        assert_eq!(p.on_flow_miss(flow(5000), 100), vec![Effect::SilentClone { five_tuple: flow(5000) }]);

        let mut ack = msg(MessageKind::PathSwitchAcknowledge, ENB2, &[(5, 300), (6, 301)]);
        ack.bearers[0].uplink_teid = Some(100);
        ack.bearers[1].uplink_teid = Some(101);
        let fx = p.on_control_message(&ack);
        assert_eq!(fx, vec![Effect::ReactivateUe { ue_ip: UE, enb_addr: ENB2, teid_map: TeidRemap::from([(200, 300), (201, 301)]) }]);
        assert_eq!(p.context(UE).unwrap().pairs(), vec![(100, 300), (101, 301)]);
    }

    #[test]
    fn cross_region_notice_at_silence() {
        let mut p = S1apProcessor::new("megw-a".into(), topology());
        attached(&mut p);
        let fx = p.on_control_message(&msg(MessageKind::PathSwitchRequest, ENB4, &[(5, 100), (6, 101)]));
        assert!(matches!(fx[..], [Effect::HandoverStarted { scenario: HandoverScenario::CrossRegion, .. }]));
        let at = p.now();
        let fx = p.on_end_marker(201);
        let notices: Vec<_> =
            fx.iter().filter_map(|e| if let Effect::MigrationNotice { notice } = e { Some(notice) } else { None }).collect();
        assert_eq!(notices.len(), 1);
        assert_eq!(notices[0].issued_at, at);
        assert_eq!(notices[0].new_mec.as_str(), "megw-c");
    }

    #[test]
    fn unknown_end_marker_does_nothing() {
        let mut p = S1apProcessor::new("megw-a".into(), topology());
        attached(&mut p);
        assert!(p.on_end_marker(0xdead).is_empty());
        // attached UEs ignore end markers too
        assert!(p.on_end_marker(200).is_empty());
    }

    #[test]
    fn effects_serialize_as_json_lines() {
        let e = LoggedEffect { at: 3, megw: "megw-a".into(), effect: Effect::SilenceUe { ue_ip: UE } };
        let line = serde_json::to_string(&e).unwrap();
        assert_eq!(line, r#"{"at":3,"megw":"megw-a","effect":"silence_ue","ue_ip":"172.16.0.2"}"#);
        assert_eq!(serde_json::from_str::<LoggedEffect>(&line).unwrap(), e);
    }
}
