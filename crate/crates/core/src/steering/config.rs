use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Symbolic name of a gateway, e.g. `"megw-a"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MegwId(pub String);

impl MegwId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl AsRef<[u8]> for MegwId {
    fn as_ref(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl fmt::Display for MegwId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MegwId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPeer {
    pub megw_id: MegwId,
    pub address: Ipv4Addr,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dip {
    pub address: Ipv4Addr,
    pub weight: f64,
}

/// Static configuration of one gateway's data plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub megw_id: MegwId,
    pub vips: BTreeSet<Ipv4Addr>,
    /// Stage I candidates: every gateway of this region, self included.
    pub region_peers: Vec<RegionPeer>,
    /// Stage II candidates: service instances behind this gateway.
    pub dips: Vec<Dip>,
    pub local_sgw: Ipv4Addr,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0} must appear exactly once in region_peers (found {1})")]
    SelfNotInRegion(MegwId, usize),
    #[error("{what} {name} has invalid weight {weight}")]
    BadWeight { what: &'static str, name: String, weight: f64 },
    #[error("duplicate {what} {name}")]
    Duplicate { what: &'static str, name: String },
}

fn check_weight(what: &'static str, name: impl fmt::Display, weight: f64) -> Result<(), ConfigError> {
    if weight.is_finite() && weight > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::BadWeight { what, name: name.to_string(), weight })
    }
}

impl SteeringConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: SteeringConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let selves = self.region_peers.iter().filter(|p| p.megw_id == self.megw_id).count();
        if selves != 1 {
            return Err(ConfigError::SelfNotInRegion(self.megw_id.clone(), selves));
        }
        let mut seen = HashSet::new();
        for p in &self.region_peers {
            check_weight("peer", &p.megw_id, p.weight)?;
            if !seen.insert(p.megw_id.clone()) {
                return Err(ConfigError::Duplicate { what: "peer", name: p.megw_id.to_string() });
            }
        }
        let mut seen = HashSet::new();
        for d in &self.dips {
            check_weight("dip", d.address, d.weight)?;
            if !seen.insert(d.address) {
                return Err(ConfigError::Duplicate { what: "dip", name: d.address.to_string() });
            }
        }
        Ok(())
    }

    pub fn is_vip(&self, addr: Ipv4Addr) -> bool {
        self.vips.contains(&addr)
    }

    pub fn is_dip(&self, addr: Ipv4Addr) -> bool {
        self.dips.iter().any(|d| d.address == addr)
    }
}
