use std::net::Ipv4Addr;

use megw::gtp::ipv4::{build_icmp_echo, build_ipv4, build_tcp, PROTO_SCTP};
use megw::gtp::{classify, decode_gtpu, encode_gtpu, inner_five_tuple, DecodeError, Direction, GtpuPacket, MessageType, PacketClass};
use megw::s1ap::{decode_message, encode_message, BearerItem, DecodeError as S1apDecodeError, MessageKind, S1apLiteMessage};
use proptest::prelude::*;

/// RFC 1071 sum written out longhand, independent of the crate's helper.
fn ones_complement(words: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for pair in words.chunks(2) {
        let hi = pair[0] as u32;
        let lo = *pair.get(1).unwrap_or(&0) as u32;
        sum += (hi << 8) | lo;
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

#[test]
fn g_pdu_matches_hand_assembled_frame() {
    let src = Ipv4Addr::new(192, 168, 10, 1);
    let dst = Ipv4Addr::new(10, 0, 0, 1);
    let inner = vec![0xde, 0xad, 0xbe, 0xef, 1, 2, 3, 4];
    let wire = encode_gtpu(&GtpuPacket::g_pdu(src, dst, 0x1122_3344, inner.clone())).unwrap();

    let mut want = vec![
        0x45, 0x00, 0x00, 44, // version/IHL, TOS, total length 20+8+8+8
        0x00, 0x00, 0x40, 0x00, // id, DF
        64, 17, 0x00, 0x00, // TTL, UDP, checksum placeholder
    ];
    want.extend(src.octets());
    want.extend(dst.octets());
    let csum = ones_complement(&want);
    want[10..12].copy_from_slice(&csum.to_be_bytes());
    want.extend([0x08, 0x68, 0x08, 0x68, 0x00, 24, 0x00, 0x00]); // UDP length 8+8+8
    want.extend([0x30, 0xff, 0x00, 0x08, 0x11, 0x22, 0x33, 0x44]);
    want.extend(&inner);
    assert_eq!(wire, want);
    assert_eq!(decode_gtpu(&want).unwrap().teid, 0x1122_3344);
}

#[test]
fn end_marker_type_and_length() {
    let wire = encode_gtpu(&GtpuPacket::end_marker(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(192, 168, 10, 1), 7)).unwrap();
    let gtp = &wire[28..];
    assert_eq!(gtp[1], 0xfe);
    assert_eq!(&gtp[2..4], &[0, 0]);
    assert_eq!(decode_gtpu(&wire).unwrap().message_type, MessageType::EndMarker);
}

#[test]
fn wrong_gtp_version() {
    let mut wire = encode_gtpu(&GtpuPacket::g_pdu(Ipv4Addr::LOCALHOST, Ipv4Addr::LOCALHOST, 1, vec![0; 4])).unwrap();
    wire[28] = 0x50;
    assert_eq!(decode_gtpu(&wire), Err(DecodeError::Version(2)));
}

#[test]
fn ten_byte_input_is_an_error() {
    assert!(matches!(decode_gtpu(&[0x45; 10]), Err(DecodeError::Truncated { .. })));
}

#[test]
fn five_tuples() {
    let ue = Ipv4Addr::new(172, 16, 0, 2);
    let vip = Ipv4Addr::new(10, 100, 1, 1);
    let t = inner_five_tuple(&build_tcp(ue, 5000, vip, 80, b"")).unwrap();
    assert_eq!((t.src_ip, t.dst_ip, t.proto, t.src_port, t.dst_port), (ue, vip, 6, 5000, 80));
    let t = inner_five_tuple(&build_icmp_echo(ue, vip, 9, 1, b"x")).unwrap();
    assert_eq!((t.proto, t.src_port, t.dst_port), (1, 0, 0));
}

#[test]
fn classification_examples() {
    let a = Ipv4Addr::new(10, 0, 0, 2);
    let b = Ipv4Addr::new(10, 0, 0, 9);
    assert_eq!(classify(&build_ipv4(a, b, PROTO_SCTP, b"s1ap"), Direction::FromRan), PacketClass::ControlPlane);
    let em = encode_gtpu(&GtpuPacket::end_marker(a, b, 1)).unwrap();
    assert_eq!(classify(&em, Direction::FromCore), PacketClass::EndMarker);
    assert_eq!(classify(&build_tcp(a, 1, b, 2, b""), Direction::FromCluster), PacketClass::PlainIp);
}

fn ipv4() -> impl Strategy<Value = Ipv4Addr> {
    any::<u32>().prop_map(Ipv4Addr::from)
}

fn gtpu_packet() -> impl Strategy<Value = GtpuPacket> {
    (ipv4(), ipv4(), any::<u32>(), any::<bool>(), prop::collection::vec(any::<u8>(), 0..512)).prop_map(|(s, d, teid, em, inner)| {
        if em {
            GtpuPacket { inner, ..GtpuPacket::end_marker(s, d, teid) }
        } else {
            GtpuPacket::g_pdu(s, d, teid, inner)
        }
    })
}

fn s1ap_message() -> impl Strategy<Value = S1apLiteMessage> {
    let kind = prop_oneof![
        Just(MessageKind::InitialContextSetupRequest),
        Just(MessageKind::InitialContextSetupResponse),
        Just(MessageKind::PathSwitchRequest),
        Just(MessageKind::PathSwitchAcknowledge),
    ];
    let items = prop::collection::btree_map(any::<u8>(), (any::<u32>(), ipv4(), any::<u32>()), 1..6);
    (kind, any::<u32>(), any::<u32>(), ipv4(), items, ipv4(), ipv4()).prop_map(|(kind, mme, enb_id, ue, items, enb, sgw)| {
        let bearers = items
            .into_iter()
            .map(|(id, (teid, addr, up))| BearerItem {
                uplink_teid: (kind == MessageKind::PathSwitchAcknowledge).then_some(up),
                ..BearerItem::new(id, teid, addr)
            })
            .collect();
        S1apLiteMessage { kind, mme_ue_id: mme, enb_ue_id: enb_id, ue_ip: ue, bearers, enb_addr: enb, sgw_addr: sgw }
    })
}

fn some_direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::FromRan), Just(Direction::FromCore), Just(Direction::FromCluster)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn gtpu_round_trip_and_stable(p in gtpu_packet()) {
        let a = encode_gtpu(&p).unwrap();
        prop_assert_eq!(&a, &encode_gtpu(&p).unwrap());
        prop_assert_eq!(decode_gtpu(&a).unwrap(), p);
    }

    #[test]
    fn gtpu_decode_is_total(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = decode_gtpu(&bytes);
    }

    #[test]
    fn gtpu_decode_survives_bit_flips(p in gtpu_packet(), at in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut wire = encode_gtpu(&p).unwrap();
        let i = at.index(wire.len());
        wire[i] ^= 1 << bit;
        let decoded = decode_gtpu(&wire);
        if i >= 36 {
            // payload bytes are opaque to the codec
            let mut inner = p.inner.clone();
            inner[i - 36] ^= 1 << bit;
            prop_assert_eq!(decoded.unwrap(), GtpuPacket { inner, ..p });
        } else if (32..36).contains(&i) {
            prop_assert_eq!(decoded.unwrap().teid, p.teid ^ (1 << (8 * (35 - i) + bit as usize)));
        }
    }

    #[test]
    fn classify_is_a_function(bytes in prop::collection::vec(any::<u8>(), 0..96), d in some_direction()) {
        prop_assert_eq!(classify(&bytes, d), classify(&bytes, d));
    }

    #[test]
    fn s1ap_round_trip(m in s1ap_message()) {
        let wire = encode_message(&m).unwrap();
        prop_assert_eq!(decode_message(&wire).unwrap(), m);
    }

    #[test]
    fn s1ap_encoding_is_injective(a in s1ap_message(), b in s1ap_message()) {
        prop_assume!(a != b);
        prop_assert_ne!(encode_message(&a).unwrap(), encode_message(&b).unwrap());
    }

    #[test]
    fn s1ap_decode_is_total(bytes in prop::collection::vec(any::<u8>(), 0..96)) {
        let _ = decode_message(&bytes);
    }
}

#[test]
fn s1ap_unknown_kind_and_empty_bearers() {
    let m = S1apLiteMessage {
        kind: MessageKind::PathSwitchRequest,
        mme_ue_id: 1,
        enb_ue_id: 2,
        ue_ip: Ipv4Addr::new(172, 16, 0, 2),
        bearers: vec![BearerItem::new(5, 1, Ipv4Addr::LOCALHOST), BearerItem::new(6, 2, Ipv4Addr::LOCALHOST)],
        enb_addr: Ipv4Addr::LOCALHOST,
        sgw_addr: Ipv4Addr::LOCALHOST,
    };
    let mut wire = encode_message(&m).unwrap();
    // length(2) kind(1) ids(8) addresses(12) then the bearer count
    assert_eq!(wire[23], 2);
    wire[2] = 0x09;
    assert_eq!(decode_message(&wire), Err(S1apDecodeError::UnknownKind(0x09)));
    assert!(encode_message(&S1apLiteMessage { bearers: vec![], ..m }).is_err());
}
