//! Frame an inner TCP packet as a G-PDU, decode it back, then build and
//! classify an end marker.

use std::net::Ipv4Addr;

use megw::gtp::ipv4::build_tcp;
use megw::gtp::{classify, decode_gtpu, encode_gtpu, inner_five_tuple, Direction, GtpuPacket};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let enb = Ipv4Addr::new(192, 168, 10, 1);
    let sgw = Ipv4Addr::new(10, 0, 0, 1);
    let inner = build_tcp(Ipv4Addr::new(172, 16, 0, 2), 40000, Ipv4Addr::new(10, 100, 1, 1), 80, b"GET / HTTP/1.1\r\n\r\n");

    let pkt = GtpuPacket::g_pdu(enb, sgw, 0x64, inner);
    let wire = encode_gtpu(&pkt)?;
    println!("g-pdu: {} bytes, {}", wire.len(), hex::encode(&wire[..36]));
    let back = decode_gtpu(&wire)?;
    assert_eq!(back, pkt);
    println!("inner flow: {:?}", inner_five_tuple(&back.inner)?);
    println!("class: {:?}", classify(&wire, Direction::FromRan));

    let em = encode_gtpu(&GtpuPacket::end_marker(sgw, enb, 0xc8))?;
    println!("end marker type byte: {:#04x}", em[28 + 1]);
    println!("class: {:?}", classify(&em, Direction::FromCore));
    println!("try: cargo run --bin megw -- codec decode {}", hex::encode(&em));
    Ok(())
}
