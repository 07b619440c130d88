//! Attach the sample UE on the virtual fabric, send a request to the VIP on
//! each bearer and show where it landed and how the echo came back.

use megw::harness::{write_ldjson, Harness, TopologyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TopologyConfig::sample();
    let vip = *cfg.vips.iter().next().expect("sample has a VIP");
    let mut h = Harness::from_config(&cfg)?;
    h.run_attach("ue-1")?;
    for bearer in [5, 6] {
        let out = h.run_flow("ue-1", bearer, vip, "hello")?;
        println!(
            "bearer {bearer}: dip={:?} via {:?}, echo {:?} on TEID {:?} (expected {:?})",
            out.dip, out.serving, out.echo_payload, out.echo_teid, out.expected_teid
        );
    }
    let path = std::env::temp_dir().join("attach_and_request.ldjson");
    write_ldjson(h.trace(), std::fs::File::create(&path)?)?;
    println!("{} trace events written to {}", h.trace().len(), path.display());
    Ok(())
}
