use std::collections::HashMap;
use std::net::Ipv4Addr;

use parking_lot::RwLock;

use super::config::{MegwId, SteeringConfig};
use super::rendezvous::{select_index, SelectError};
use crate::gtp::FiveTuple;

/// Per-flow state kept by the serving gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Affinity {
    /// Fixed for the lifetime of the flow.
    pub dip: Ipv4Addr,
    /// Gateway the latest upstream packet was handed over from; `None` when
    /// it arrived from this gateway's own RAN side.
    pub return_via: Option<MegwId>,
}

#[derive(Debug, Default)]
struct Inner {
    by_flow: HashMap<FiveTuple, Affinity>,
    /// DIP-to-UE reply tuple back to the VIP-addressed flow.
    by_reply: HashMap<FiveTuple, FiveTuple>,
}

/// Connection-to-DIP table for the second load-balancing stage.
#[derive(Debug, Default)]
pub struct DipAffinityTable {
    inner: RwLock<Inner>,
}

fn reply_key(flow: &FiveTuple, dip: Ipv4Addr) -> FiveTuple {
    FiveTuple { dst_ip: dip, ..*flow }.reversed()
}

impl DipAffinityTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, flow: &FiveTuple) -> Option<Affinity> {
        self.inner.read().by_flow.get(flow).cloned()
    }

    /// Finds the VIP flow a DIP reply belongs to.
    pub fn lookup_reply(&self, reply: &FiveTuple) -> Option<(FiveTuple, Affinity)> {
        let inner = self.inner.read();
        let flow = inner.by_reply.get(reply)?;
        Some((*flow, inner.by_flow[flow].clone()))
    }

    /// Records which gateway the flow's upstream arrived through. Has no
    /// effect on flows without an entry.
    pub fn note_return_path(&self, flow: &FiveTuple, via: Option<MegwId>) {
        if let Some(a) = self.inner.write().by_flow.get_mut(flow) {
            a.return_via = via;
        }
    }

    pub fn remove(&self, flow: &FiveTuple) -> Option<Affinity> {
        let mut inner = self.inner.write();
        let a = inner.by_flow.remove(flow)?;
        inner.by_reply.remove(&reply_key(flow, a.dip));
        Some(a)
    }

    pub fn len(&self) -> usize {
        self.inner.read().by_flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert_if_absent(&self, flow: FiveTuple, dip: Ipv4Addr) -> Ipv4Addr {
        let mut inner = self.inner.write();
        if let Some(a) = inner.by_flow.get(&flow) {
            return a.dip;
        }
        inner.by_flow.insert(flow, Affinity { dip, return_via: None });
        inner.by_reply.insert(reply_key(&flow, dip), flow);
        dip
    }
}

/// Stage II: the flow's pinned DIP, or a fresh rendezvous pick over the
/// current DIP pool keyed by the full 5-tuple.
pub fn stage2_select(flow: &FiveTuple, table: &DipAffinityTable, cfg: &SteeringConfig) -> Result<Ipv4Addr, SelectError> {
    if let Some(a) = table.get(flow) {
        return Ok(a.dip);
    }
    let dips: Vec<[u8; 4]> = cfg.dips.iter().map(|d| d.address.octets()).collect();
    let idx = select_index(&flow.key_bytes(), dips.iter().zip(&cfg.dips).map(|(o, d)| (&o[..], d.weight)))?;
    Ok(table.insert_if_absent(*flow, cfg.dips[idx].address))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steering::config::{Dip, RegionPeer};

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn cfg(dips: &[&str]) -> SteeringConfig {
        SteeringConfig {
            megw_id: "m".into(),
            vips: [ip("10.100.1.1")].into(),
            region_peers: vec![RegionPeer { megw_id: "m".into(), address: ip("192.168.1.1"), weight: 1.0 }],
            dips: dips.iter().map(|d| Dip { address: ip(d), weight: 1.0 }).collect(),
            local_sgw: ip("10.0.0.1"),
        }
    }

    fn flow(port: u16) -> FiveTuple {
        FiveTuple::new(ip("172.16.0.2"), ip("10.100.1.1"), 6, port, 80)
    }

    #[test]
    fn repeated_calls_are_sticky() {
        let table = DipAffinityTable::new();
        let c = cfg(&["10.200.0.1", "10.200.0.2", "10.200.0.3"]);
        let first = stage2_select(&flow(5000), &table, &c).unwrap();
        for _ in 0..10 {
            assert_eq!(stage2_select(&flow(5000), &table, &c).unwrap(), first);
        }
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn pool_changes_do_not_move_existing_flows() {
        let table = DipAffinityTable::new();
        let mut c = cfg(&["10.200.0.1", "10.200.0.2"]);
        let before: Vec<_> = (0..200).map(|p| stage2_select(&flow(p), &table, &c).unwrap()).collect();
        c.dips.push(Dip { address: ip("10.200.0.3"), weight: 50.0 });
        c.dips.remove(0);
        let after: Vec<_> = (0..200).map(|p| stage2_select(&flow(p), &table, &c).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn every_equal_weight_dip_gets_flows() {
        let table = DipAffinityTable::new();
        let c = cfg(&["10.200.0.1", "10.200.0.2", "10.200.0.3", "10.200.0.4"]);
        let mut counts = HashMap::new();
        for p in 0..1000 {
            *counts.entry(stage2_select(&flow(p), &table, &c).unwrap()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&n| n > 0));
    }

    #[test]
    fn empty_pool_is_an_error() {
        assert_eq!(stage2_select(&flow(1), &DipAffinityTable::new(), &cfg(&[])), Err(SelectError::Empty));
    }

    #[test]
    fn reply_lookup() {
        let table = DipAffinityTable::new();
        let c = cfg(&["10.200.0.1"]);
        let f = flow(5000);
        stage2_select(&f, &table, &c).unwrap();
        table.note_return_path(&f, Some("peer".into()));
        let reply = FiveTuple::new(ip("10.200.0.1"), ip("172.16.0.2"), 6, 80, 5000);
        let (found, a) = table.lookup_reply(&reply).unwrap();
        assert_eq!(found, f);
        assert_eq!(a.return_via, Some("peer".into()));
        table.remove(&f);
        assert!(table.lookup_reply(&reply).is_none());
    }
}
