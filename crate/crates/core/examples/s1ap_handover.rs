//! Feed an S1AP-lite message sequence to the controller and print the
//! effects it asks the data plane to carry out during a cross-region
//! handover.

use std::net::Ipv4Addr;

use megw::control::{MegwPlacement, RegionMap, S1apProcessor};
use megw::s1ap::{decode_message, encode_message, BearerItem, MessageKind, S1apLiteMessage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ue = Ipv4Addr::new(172, 16, 0, 2);
    let sgw = Ipv4Addr::new(10, 0, 0, 1);
    let old_enb = Ipv4Addr::new(192, 168, 10, 1);
    let new_enb = Ipv4Addr::new(192, 168, 30, 1);

    let mut topo = RegionMap::default();
    topo.enb_to_megw.insert(old_enb, "megw-a".into());
    topo.enb_to_megw.insert(new_enb, "megw-c".into());
    topo.megws.insert("megw-a".into(), MegwPlacement { region: "A".into(), weight: 1.0 });
    topo.megws.insert("megw-c".into(), MegwPlacement { region: "B".into(), weight: 1.0 });
    let mut ctl = S1apProcessor::new("megw-a".into(), topo);

    let message = |kind, enb, teid, addr| S1apLiteMessage {
        kind,
        mme_ue_id: 7,
        enb_ue_id: 3,
        ue_ip: ue,
        bearers: vec![BearerItem::new(5, teid, addr)],
        enb_addr: enb,
        sgw_addr: sgw,
    };
    let sequence = [
        message(MessageKind::InitialContextSetupRequest, old_enb, 100, sgw),
        message(MessageKind::InitialContextSetupResponse, old_enb, 200, old_enb),
        message(MessageKind::PathSwitchRequest, new_enb, 300, new_enb),
    ];
    for msg in &sequence {
        // what the gateway actually sees is the encoded clone
        let wire = encode_message(msg)?;
        let at = ctl.now();
        let fx = ctl.on_control_message(&decode_message(&wire)?);
        println!("t={at} {:?} -> {}", msg.kind, serde_json::to_string(&fx)?);
    }
    let at = ctl.now();
    let fx = ctl.on_end_marker(200);
    println!("t={at} end marker -> {}", serde_json::to_string(&fx)?);
    Ok(())
}
