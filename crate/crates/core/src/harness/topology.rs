use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{MegwPlacement, RegionMap};
use crate::steering::{Dip, MegwId, RegionPeer, SteeringConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSpec {
    pub sgw_addr: Ipv4Addr,
    pub mme_addr: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MegwSpec {
    pub id: MegwId,
    pub address: Ipv4Addr,
    pub region: String,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnbSpec {
    pub id: String,
    pub address: Ipv4Addr,
    pub megw: MegwId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipSpec {
    pub id: String,
    pub address: Ipv4Addr,
    pub megw: MegwId,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeSpec {
    pub id: String,
    pub ip: Ipv4Addr,
    /// eNB the UE starts under.
    pub enb: String,
    pub bearers: Vec<u8>,
}

fn one() -> f64 {
    1.0
}

fn default_latency() -> u64 {
    1
}

/// The JSON topology document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    #[serde(default)]
    pub seed: u64,
    /// Ticks per hop.
    #[serde(default = "default_latency")]
    pub link_latency: u64,
    pub core: CoreSpec,
    pub regions: Vec<String>,
    pub megws: Vec<MegwSpec>,
    pub enbs: Vec<EnbSpec>,
    pub dips: Vec<DipSpec>,
    pub vips: BTreeSet<Ipv4Addr>,
    pub ues: Vec<UeSpec>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid topology JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{what} {id} references unknown {target} {name}")]
    Dangling { what: &'static str, id: String, target: &'static str, name: String },
    #[error("duplicate {what} {name}")]
    Duplicate { what: &'static str, name: String },
    #[error("address {0} is used by more than one node")]
    AddressClash(Ipv4Addr),
    #[error("{what} {id} has invalid weight {weight}")]
    BadWeight { what: &'static str, id: String, weight: f64 },
    #[error("UE {0} has no bearers")]
    NoBearers(String),
    #[error("invalid steering configuration: {0}")]
    Steering(#[from] crate::steering::ConfigError),
}

/// A validated topology with lookup tables.
#[derive(Debug, Clone)]
pub struct Topology {
    pub config: TopologyConfig,
    pub region_map: RegionMap,
}

fn dangling(what: &'static str, id: impl ToString, target: &'static str, name: impl ToString) -> ConfigError {
    ConfigError::Dangling { what, id: id.to_string(), target, name: name.to_string() }
}

impl TopologyConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(s)?)
    }

    /// Three gateways in two regions: `megw-a` and `megw-b` form region A,
    /// `megw-c` alone forms region B. `enb-1` and `enb-2` hang off `megw-a`,
    /// `enb-3` off `megw-b`, `enb-4` off `megw-c`. One UE with two bearers.
    pub fn sample() -> Self {
        let ip = |a, b, c, d| Ipv4Addr::new(a, b, c, d);
        let megw = |id: &str, addr, region: &str| MegwSpec { id: id.into(), address: addr, region: region.into(), weight: 1.0 };
        let enb = |id: &str, addr, m: &str| EnbSpec { id: id.into(), address: addr, megw: m.into() };
        let dip = |id: &str, addr, m: &str| DipSpec { id: id.into(), address: addr, megw: m.into(), weight: 1.0 };
        TopologyConfig {
            seed: 7,
            link_latency: 1,
            core: CoreSpec { sgw_addr: ip(10, 0, 0, 1), mme_addr: ip(10, 0, 0, 2) },
            regions: vec!["A".into(), "B".into()],
            megws: vec![
                megw("megw-a", ip(192, 168, 1, 1), "A"),
                megw("megw-b", ip(192, 168, 2, 1), "A"),
                megw("megw-c", ip(192, 168, 3, 1), "B"),
            ],
            enbs: vec![
                enb("enb-1", ip(192, 168, 10, 1), "megw-a"),
                enb("enb-2", ip(192, 168, 10, 2), "megw-a"),
                enb("enb-3", ip(192, 168, 20, 1), "megw-b"),
                enb("enb-4", ip(192, 168, 30, 1), "megw-c"),
            ],
            dips: vec![
                dip("dip-a1", ip(10, 200, 1, 1), "megw-a"),
                dip("dip-a2", ip(10, 200, 1, 2), "megw-a"),
                dip("dip-b1", ip(10, 200, 2, 1), "megw-b"),
                dip("dip-b2", ip(10, 200, 2, 2), "megw-b"),
                dip("dip-c1", ip(10, 200, 3, 1), "megw-c"),
                dip("dip-c2", ip(10, 200, 3, 2), "megw-c"),
            ],
            vips: [ip(10, 100, 1, 1)].into(),
            ues: vec![UeSpec { id: "ue-1".into(), ip: ip(172, 16, 0, 2), enb: "enb-1".into(), bearers: vec![5, 6] }],
        }
    }
}

pub fn build_topology(config: &TopologyConfig) -> Result<Topology, ConfigError> {
    let regions: HashSet<&str> = config.regions.iter().map(String::as_str).collect();
    if regions.len() != config.regions.len() {
        return Err(ConfigError::Duplicate { what: "region", name: duplicate(config.regions.iter()) });
    }
    let mut ids = HashSet::new();
    let mut addrs = HashSet::new();
    let mut claim = |what: &'static str, id: &str, addr: Ipv4Addr| -> Result<(), ConfigError> {
        if !ids.insert(id.to_owned()) {
            return Err(ConfigError::Duplicate { what, name: id.to_owned() });
        }
        if !addrs.insert(addr) {
            return Err(ConfigError::AddressClash(addr));
        }
        Ok(())
    };
    claim("core", "sgw", config.core.sgw_addr)?;
    if config.core.mme_addr != config.core.sgw_addr {
        claim("core", "mme", config.core.mme_addr)?;
    }
    for m in &config.megws {
        claim("megw", m.id.as_str(), m.address)?;
        if !regions.contains(m.region.as_str()) {
            return Err(dangling("megw", &m.id, "region", &m.region));
        }
        if !(m.weight.is_finite() && m.weight > 0.0) {
            return Err(ConfigError::BadWeight { what: "megw", id: m.id.to_string(), weight: m.weight });
        }
    }
    let megw_ids: HashSet<&MegwId> = config.megws.iter().map(|m| &m.id).collect();
    for e in &config.enbs {
        claim("enb", &e.id, e.address)?;
        if !megw_ids.contains(&e.megw) {
            return Err(dangling("enb", &e.id, "megw", &e.megw));
        }
    }
    for d in &config.dips {
        claim("dip", &d.id, d.address)?;
        if !megw_ids.contains(&d.megw) {
            return Err(dangling("dip", &d.id, "megw", &d.megw));
        }
        if !(d.weight.is_finite() && d.weight > 0.0) {
            return Err(ConfigError::BadWeight { what: "dip", id: d.id.clone(), weight: d.weight });
        }
    }
    for v in &config.vips {
        claim("vip", &v.to_string(), *v)?;
    }
    for u in &config.ues {
        claim("ue", &u.id, u.ip)?;
        if !config.enbs.iter().any(|e| e.id == u.enb) {
            return Err(dangling("ue", &u.id, "enb", &u.enb));
        }
        if u.bearers.is_empty() {
            return Err(ConfigError::NoBearers(u.id.clone()));
        }
        if u.bearers.iter().collect::<HashSet<_>>().len() != u.bearers.len() {
            return Err(ConfigError::Duplicate { what: "bearer of", name: u.id.clone() });
        }
    }

    let region_map = RegionMap {
        enb_to_megw: config.enbs.iter().map(|e| (e.address, e.megw.clone())).collect(),
        megws: config
            .megws
            .iter()
            .map(|m| (m.id.clone(), MegwPlacement { region: m.region.clone(), weight: m.weight }))
            .collect::<BTreeMap<_, _>>(),
    };
    let topo = Topology { config: config.clone(), region_map };
    for m in &config.megws {
        topo.steering_config(&m.id).validate()?;
    }
    Ok(topo)
}

fn duplicate<'a>(items: impl Iterator<Item = &'a String>) -> String {
    let mut seen = HashSet::new();
    for i in items {
        if !seen.insert(i) {
            return i.clone();
        }
    }
    String::new()
}

impl Topology {
    pub fn megw(&self, id: &MegwId) -> Option<&MegwSpec> {
        self.config.megws.iter().find(|m| m.id == *id)
    }

    pub fn enb(&self, id: &str) -> Option<&EnbSpec> {
        self.config.enbs.iter().find(|e| e.id == id)
    }

    pub fn enb_by_addr(&self, addr: Ipv4Addr) -> Option<&EnbSpec> {
        self.config.enbs.iter().find(|e| e.address == addr)
    }

    pub fn dip(&self, id: &str) -> Option<&DipSpec> {
        self.config.dips.iter().find(|d| d.id == id)
    }

    pub fn dip_by_addr(&self, addr: Ipv4Addr) -> Option<&DipSpec> {
        self.config.dips.iter().find(|d| d.address == addr)
    }

    pub fn ue(&self, id: &str) -> Option<&UeSpec> {
        self.config.ues.iter().find(|u| u.id == id)
    }

    pub fn region_of_enb(&self, enb: &str) -> Option<&str> {
        let e = self.enb(enb)?;
        Some(self.megw(&e.megw)?.region.as_str())
    }

    /// Data-plane configuration of one gateway.
    pub fn steering_config(&self, id: &MegwId) -> SteeringConfig {
        let region = self.megw(id).map(|m| m.region.clone()).unwrap_or_default();
        SteeringConfig {
            megw_id: id.clone(),
            vips: self.config.vips.clone(),
            region_peers: self
                .config
                .megws
                .iter()
                .filter(|m| m.region == region)
                .map(|m| RegionPeer { megw_id: m.id.clone(), address: m.address, weight: m.weight })
                .collect(),
            dips: self.config.dips.iter().filter(|d| d.megw == *id).map(|d| Dip { address: d.address, weight: d.weight }).collect(),
            local_sgw: self.config.core.sgw_addr,
        }
    }
}
