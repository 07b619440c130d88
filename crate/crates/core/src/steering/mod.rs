//! The gateway data plane: offloader tables, the two load-balancing stages
//! and the per-packet forwarding decision.

mod affinity;
mod config;
mod pipeline;
pub mod rendezvous;
mod rules;

use std::net::Ipv4Addr;

pub use affinity::{stage2_select, Affinity, DipAffinityTable};
pub use config::{ConfigError, Dip, MegwId, RegionPeer, SteeringConfig};
pub use pipeline::{process_packet, ControllerEvent, DropReason, Egress, ForwardAction, Ingress, SteeringPipeline};
pub use rendezvous::{rendezvous_select, SelectError, Weighted};
pub use rules::{ConflictError, FlowRule, Installed, RuleState, RuleStore, TeidRemap};

/// Stage I: picks the serving gateway for a UE among the region's gateways.
/// Keyed only by the UE address, so every gateway of the region agrees.
pub fn stage1_select(ue_ip: Ipv4Addr, cfg: &SteeringConfig) -> Result<&MegwId, SelectError> {
    let idx = rendezvous::select_index(&ue_ip.octets(), cfg.region_peers.iter().map(|p| (p.megw_id.as_ref(), p.weight)))?;
    Ok(&cfg.region_peers[idx].megw_id)
}
