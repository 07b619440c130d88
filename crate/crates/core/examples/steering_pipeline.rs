//! Drive one gateway's data plane by hand: an upstream request misses, the
//! controller installs a rule from the attach pairs, and the DIP's reply is
//! tunnelled back to the eNB.

use std::net::Ipv4Addr;

use megw::control::{apply_effects, MegwPlacement, RegionMap, S1apProcessor};
use megw::gtp::ipv4::build_tcp;
use megw::gtp::{decode_gtpu, encode_gtpu, GtpuPacket};
use megw::s1ap::{BearerItem, MessageKind, S1apLiteMessage};
use megw::steering::{Egress, ForwardAction, Ingress, SteeringConfig, SteeringPipeline};

const CONFIG: &str = r#"{
    "megw_id": "megw-a",
    "vips": ["10.100.1.1"],
    "region_peers": [{"megw_id": "megw-a", "address": "192.168.1.1", "weight": 1.0}],
    "dips": [
        {"address": "10.200.1.1", "weight": 1.0},
        {"address": "10.200.1.2", "weight": 1.0}
    ],
    "local_sgw": "10.0.0.1"
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ue = Ipv4Addr::new(172, 16, 0, 2);
    let enb = Ipv4Addr::new(192, 168, 10, 1);
    let sgw = Ipv4Addr::new(10, 0, 0, 1);
    let vip = Ipv4Addr::new(10, 100, 1, 1);

    let pipeline = SteeringPipeline::new(SteeringConfig::from_json(CONFIG)?);
    let mut topo = RegionMap::default();
    topo.enb_to_megw.insert(enb, "megw-a".into());
    topo.megws.insert("megw-a".into(), MegwPlacement { region: "A".into(), weight: 1.0 });
    let mut ctl = S1apProcessor::new("megw-a".into(), topo);

    // attach: the controller learns the TEID pair from the S1AP exchange
    let setup = |kind, teid, addr| S1apLiteMessage {
        kind,
        mme_ue_id: 1,
        enb_ue_id: 1,
        ue_ip: ue,
        bearers: vec![BearerItem::new(5, teid, addr)],
        enb_addr: enb,
        sgw_addr: sgw,
    };
    ctl.on_control_message(&setup(MessageKind::InitialContextSetupRequest, 100, sgw));
    println!("{:?}", ctl.on_control_message(&setup(MessageKind::InitialContextSetupResponse, 200, enb)));

    let request = encode_gtpu(&GtpuPacket::g_pdu(enb, sgw, 100, build_tcp(ue, 40000, vip, 80, b"ping")))?;
    let act = pipeline.process(&request, &Ingress::Ran);
    let mut dip = None;
    for leaf in act.leaves() {
        match leaf {
            ForwardAction::Emit { to: Egress::Dip(d), .. } => dip = Some(*d),
            ForwardAction::CloneToController { event } => {
                let fx = ctl.on_event(event);
                println!("controller: {fx:?}");
                apply_effects(&fx, pipeline.rules())?;
            }
            other => println!("{other:?}"),
        }
    }
    let dip = dip.ok_or("request reached no DIP")?;
    println!("request steered to {dip}, {} rule(s) installed", pipeline.rules().len());

    let reply = build_tcp(dip, 80, ue, 40000, b"pong");
    match pipeline.process(&reply, &Ingress::Cluster) {
        ForwardAction::Emit { to: Egress::Enb(e), bytes } => {
            let pkt = decode_gtpu(&bytes)?;
            println!("reply tunnelled to {e} with TEID {}", pkt.teid);
        }
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
