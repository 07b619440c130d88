use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gtp::FiveTuple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleState {
    Active,
    /// Handover silent period: downstream dropped, upstream cloned.
    Silent,
}

/// Binds an upstream 5-tuple to the bearer it arrived on, so replies go back
/// on the same bearer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRule {
    /// Upstream orientation: UE address and port are the source.
    pub key: FiveTuple,
    pub downstream_teid: u32,
    pub enb_addr: Ipv4Addr,
    pub sgw_addr: Ipv4Addr,
    pub state: RuleState,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule for {key} already maps to TEID {existing_teid:#x}, refusing TEID {new_teid:#x}")]
pub struct ConflictError {
    pub key: FiveTuple,
    pub existing_teid: u32,
    pub new_teid: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Installed {
    New,
    Unchanged,
}

/// Old downstream TEID to new downstream TEID, one entry per bearer.
pub type TeidRemap = BTreeMap<u32, u32>;

/// The 5-tuple GTP context table. One writer (the controller), many readers.
#[derive(Debug, Default)]
pub struct RuleStore {
    rules: RwLock<HashMap<FiveTuple, FlowRule>>,
}

impl RuleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn install(&self, rule: FlowRule) -> Result<Installed, ConflictError> {
        let mut rules = self.rules.write();
        match rules.get(&rule.key) {
            Some(existing) if *existing == rule => Ok(Installed::Unchanged),
            Some(existing) => Err(ConflictError { key: rule.key, existing_teid: existing.downstream_teid, new_teid: rule.downstream_teid }),
            None => {
                rules.insert(rule.key, rule);
                Ok(Installed::New)
            }
        }
    }

    pub fn get(&self, key: &FiveTuple) -> Option<FlowRule> {
        self.rules.read().get(key).copied()
    }

    /// Moves every rule of `ue_ip` into the silent state.
    pub fn set_ue_silent(&self, ue_ip: Ipv4Addr) -> usize {
        let mut rules = self.rules.write();
        let mut n = 0;
        for rule in rules.values_mut().filter(|r| r.key.src_ip == ue_ip) {
            rule.state = RuleState::Silent;
            n += 1;
        }
        n
    }

    /// Re-points `ue_ip`'s rules at `enb_addr` with the new downstream TEID of
    /// their bearer and marks them active. Rules whose TEID is not in `remap`
    /// are left alone.
    pub fn reactivate_ue(&self, ue_ip: Ipv4Addr, enb_addr: Ipv4Addr, remap: &TeidRemap) -> usize {
        let mut rules = self.rules.write();
        let mut n = 0;
        for rule in rules.values_mut().filter(|r| r.key.src_ip == ue_ip) {
            if let Some(&teid) = remap.get(&rule.downstream_teid) {
                rule.downstream_teid = teid;
                rule.enb_addr = enb_addr;
                rule.state = RuleState::Active;
                n += 1;
            }
        }
        n
    }

    pub fn rules_for_ue(&self, ue_ip: Ipv4Addr) -> Vec<FlowRule> {
        let mut out: Vec<_> = self.rules.read().values().filter(|r| r.key.src_ip == ue_ip).copied().collect();
        out.sort_by_key(|r| r.key);
        out
    }

    /// All rules, sorted by key.
    pub fn snapshot(&self) -> Vec<FlowRule> {
        let mut out: Vec<_> = self.rules.read().values().copied().collect();
        out.sort_by_key(|r| r.key);
        out
    }

    pub fn len(&self) -> usize {
        self.rules.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn rule(port: u16, teid: u32) -> FlowRule {
        FlowRule {
            key: FiveTuple::new(ip("172.16.0.2"), ip("10.100.1.1"), 6, port, 80),
            downstream_teid: teid,
            enb_addr: ip("192.168.10.1"),
            sgw_addr: ip("10.0.0.1"),
            state: RuleState::Active,
        }
    }

    #[test]
    fn install_lookup_and_idempotence() {
        let store = RuleStore::new();
        let r = rule(5000, 200);
        assert_eq!(store.install(r), Ok(Installed::New));
        assert_eq!(store.get(&r.key), Some(r));
        assert_eq!(store.install(r), Ok(Installed::Unchanged));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn conflicting_teid_rejected() {
        let store = RuleStore::new();
        store.install(rule(5000, 200)).unwrap();
        let err = store.install(rule(5000, 201)).unwrap_err();
        assert_eq!((err.existing_teid, err.new_teid), (200, 201));
        assert_eq!(store.get(&rule(5000, 0).key).unwrap().downstream_teid, 200);
    }

    #[test]
    fn silence_and_reactivate() {
        let store = RuleStore::new();
        store.install(rule(5000, 200)).unwrap();
        store.install(rule(5001, 201)).unwrap();
        assert_eq!(store.set_ue_silent(ip("172.16.0.2")), 2);
        assert_eq!(store.set_ue_silent(ip("172.16.0.9")), 0);
        assert!(store.snapshot().iter().all(|r| r.state == RuleState::Silent));

        let remap = TeidRemap::from([(200, 300), (201, 301)]);
        assert_eq!(store.reactivate_ue(ip("172.16.0.2"), ip("192.168.20.1"), &remap), 2);
        let rules = store.rules_for_ue(ip("172.16.0.2"));
        assert_eq!(rules.iter().map(|r| r.downstream_teid).collect::<Vec<_>>(), vec![300, 301]);
        assert!(rules.iter().all(|r| r.state == RuleState::Active && r.enb_addr == ip("192.168.20.1")));
    }
}
