//! Software forwarding rate of the steering pipeline for installed flows.
//! Prints packets per second; the number depends entirely on the machine.

use std::net::Ipv4Addr;
use std::time::Instant;

use megw::gtp::ipv4::{build_tcp, FiveTuple};
use megw::gtp::{encode_gtpu, GtpuPacket};
use megw::steering::{Dip, FlowRule, Ingress, RegionPeer, RuleState, SteeringConfig, SteeringPipeline};

fn main() {
    let enb = Ipv4Addr::new(192, 168, 10, 1);
    let sgw = Ipv4Addr::new(10, 0, 0, 1);
    let vip = Ipv4Addr::new(10, 100, 1, 1);
    let cfg = SteeringConfig {
        megw_id: "megw-a".into(),
        vips: [vip].into(),
        region_peers: vec![RegionPeer { megw_id: "megw-a".into(), address: Ipv4Addr::new(192, 168, 1, 1), weight: 1.0 }],
        dips: (1..=8).map(|i| Dip { address: Ipv4Addr::new(10, 200, 1, i), weight: 1.0 }).collect(),
        local_sgw: sgw,
    };
    let pipeline = SteeringPipeline::new(cfg);

    let flows = 1024u16;
    let packets: Vec<Vec<u8>> = (0..flows)
        .map(|i| {
            let ue = Ipv4Addr::new(172, 16, (i >> 8) as u8, i as u8);
            let port = 40000 + i;
            pipeline
                .rules()
                .install(FlowRule {
                    key: FiveTuple::new(ue, vip, 6, port, 80),
                    downstream_teid: 0x1000 + u32::from(i),
                    enb_addr: enb,
                    sgw_addr: sgw,
                    state: RuleState::Active,
                })
                .unwrap();
            encode_gtpu(&GtpuPacket::g_pdu(enb, sgw, 100, build_tcp(ue, port, vip, 80, &[0u8; 64]))).unwrap()
        })
        .collect();

    let rounds = 300;
    let start = Instant::now();
    let mut emitted = 0usize;
    for _ in 0..rounds {
        for p in &packets {
            emitted += pipeline.process(p, &Ingress::Ran).emitted().len();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let n = rounds * packets.len();
    println!("{n} upstream packets over {flows} flows in {secs:.3}s: {:.0} pps ({emitted} emitted)", n as f64 / secs);
}
