use std::net::Ipv4Addr;

use megw::control::{Effect, HandoverScenario, MegwPlacement, RegionMap, S1apProcessor};
use megw::gtp::ipv4::FiveTuple;
use megw::harness::{
    build_topology, run_named, write_ldjson, Action, ConfigError, Harness, StepOutcome, TopologyConfig, TraceExt, SCENARIOS,
};
use megw::s1ap::{BearerItem, MessageKind, S1apLiteMessage};
use proptest::prelude::*;

const SGW: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);

fn region_map() -> RegionMap {
    let mut t = RegionMap::default();
    for (i, (megw, region)) in [("megw-a", "A"), ("megw-b", "A"), ("megw-c", "B")].into_iter().enumerate() {
        t.enb_to_megw.insert(Ipv4Addr::new(192, 168, 10, i as u8 + 1), megw.into());
        t.megws.insert(megw.into(), MegwPlacement { region: region.into(), weight: 1.0 });
    }
    t
}

#[derive(Debug, Clone)]
enum Input {
    Control(S1apLiteMessage),
    Miss(FiveTuple, u32),
    EndMarker(u32),
}

/// Attach, one flow, a handover to `new_enb` and its completion.
fn lifecycle(ue: Ipv4Addr, old_enb: Ipv4Addr, new_enb: Ipv4Addr, base: u32) -> Vec<Input> {
    let msg = |kind, enb, teid, up: Option<u32>| {
        Input::Control(S1apLiteMessage {
            kind,
            mme_ue_id: base,
            enb_ue_id: base,
            ue_ip: ue,
            bearers: vec![BearerItem {
                uplink_teid: up,
                ..BearerItem::new(5, teid, if kind == MessageKind::InitialContextSetupRequest { SGW } else { enb })
            }],
            enb_addr: enb,
            sgw_addr: SGW,
        })
    };
    vec![
        msg(MessageKind::InitialContextSetupRequest, old_enb, base, None),
        msg(MessageKind::InitialContextSetupResponse, old_enb, base + 1, None),
        Input::Miss(FiveTuple::new(ue, Ipv4Addr::new(10, 100, 1, 1), 6, 4000, 80), base),
        msg(MessageKind::PathSwitchRequest, new_enb, base + 2, None),
        Input::EndMarker(base + 1),
        msg(MessageKind::PathSwitchAcknowledge, new_enb, base + 2, Some(base)),
    ]
}

fn feed(p: &mut S1apProcessor, input: &Input) -> Vec<Effect> {
    match input {
        Input::Control(m) => p.on_control_message(m),
        Input::Miss(t, teid) => p.on_flow_miss(*t, *teid),
        Input::EndMarker(teid) => p.on_end_marker(*teid),
    }
}

fn isolated(inputs: &[Input], me: &str) -> Vec<Vec<Effect>> {
    let mut p = S1apProcessor::new(me.into(), region_map());
    inputs.iter().map(|i| feed(&mut p, i)).collect()
}

proptest! {
    #[test]
    fn processors_do_not_interfere(order in prop::collection::vec(any::<bool>(), 12)) {
        let enb = |i| Ipv4Addr::new(192, 168, 10, i);
        let a_in = lifecycle(Ipv4Addr::new(172, 16, 0, 2), enb(1), enb(3), 100);
        let b_in = lifecycle(Ipv4Addr::new(172, 16, 0, 3), enb(2), enb(1), 500);
        let (mut a, mut b) = (S1apProcessor::new("megw-a".into(), region_map()), S1apProcessor::new("megw-b".into(), region_map()));
        let (mut a_out, mut b_out) = (Vec::new(), Vec::new());
        let (mut ai, mut bi) = (0, 0);
        for pick_a in order.into_iter().chain(std::iter::repeat_n(true, 6)).chain(std::iter::repeat_n(false, 6)) {
            if pick_a && ai < a_in.len() {
                a_out.push(feed(&mut a, &a_in[ai]));
                ai += 1;
            } else if !pick_a && bi < b_in.len() {
                b_out.push(feed(&mut b, &b_in[bi]));
                bi += 1;
            }
        }
        prop_assert_eq!(a_out, isolated(&a_in, "megw-a"));
        prop_assert_eq!(b_out, isolated(&b_in, "megw-b"));
    }
}

#[test]
fn notices_only_for_cross_region() {
    let enb = |i| Ipv4Addr::new(192, 168, 10, i);
    for (target, scenario) in
        [(1u8, HandoverScenario::SameMegw), (2, HandoverScenario::SameRegionDifferentMegw), (3, HandoverScenario::CrossRegion)]
    {
        let inputs = lifecycle(Ipv4Addr::new(172, 16, 0, 2), enb(1), enb(target), 100);
        let effects: Vec<Effect> = isolated(&inputs, "megw-a").concat();
        let notices = effects.iter().filter(|e| matches!(e, Effect::MigrationNotice { .. })).count();
        assert_eq!(notices, usize::from(scenario == HandoverScenario::CrossRegion), "{scenario:?}");
        assert!(effects.iter().any(|e| matches!(e, Effect::HandoverStarted { scenario: s, .. } if *s == scenario)));
        assert!(effects.iter().any(|e| matches!(e, Effect::ReactivateUe { .. })));
    }
}

fn trace_bytes(cfg: &TopologyConfig, scenario: &str) -> Vec<u8> {
    let mut h = Harness::from_config(cfg).unwrap();
    assert!(run_named(&mut h, scenario).unwrap().passed());
    let mut out = Vec::new();
    write_ldjson(h.trace(), &mut out).unwrap();
    out
}

#[test]
fn traces_are_byte_identical_across_runs() {
    let cfg = TopologyConfig::sample();
    for name in SCENARIOS {
        assert_eq!(trace_bytes(&cfg, name), trace_bytes(&cfg, name), "{name}");
    }
    let reseeded = TopologyConfig { seed: 99, ..cfg.clone() };
    assert_ne!(trace_bytes(&cfg, "edge-request"), trace_bytes(&reseeded, "edge-request"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn handover_scenarios_hold_for_any_seed_and_ue(seed in any::<u64>(), host in 2u16..2000) {
        let mut cfg = TopologyConfig { seed, ..TopologyConfig::sample() };
        cfg.ues[0].ip = Ipv4Addr::new(172, 16, (host >> 8) as u8, host as u8);
        for name in ["x2-same-megw", "x2-same-region", "x2-cross-region", "multi-bearer"] {
            let mut h = Harness::from_config(&cfg).unwrap();
            let report = run_named(&mut h, name).unwrap();
            prop_assert!(report.passed(), "{}: {:?}", name, report.failures);
            for step in &report.steps {
                if let StepOutcome::X2Handover { outcome } = step {
                    // the same downstream probe after the ack reaches the UE
                    for f in &outcome.flows {
                        prop_assert!(f.probe_after.as_ref().is_some_and(|p| !p.dropped && p.delivered_teid.is_some()));
                    }
                    let notices = outcome.trace.count(Action::MigrationNotified);
                    prop_assert_eq!(notices, usize::from(name == "x2-cross-region"));
                }
            }
        }
    }
}

#[test]
fn attach_clones_twice_and_installs_nothing() {
    let mut h = Harness::from_config(&TopologyConfig::sample()).unwrap();
    let first = h.run_attach("ue-1").unwrap();
    assert_eq!(first.count(Action::RuleInstalled), 0);
    assert_eq!(first.with_action(Action::Cloned).len(), 2);
    let again = h.run_attach("ue-1").unwrap();
    assert_eq!(again.count(Action::RuleInstalled), 0);
    let megw = megw::steering::MegwId::new("megw-a");
    assert_eq!(h.processor(&megw).unwrap().contexts().count(), 1);
}

#[test]
fn minimal_topology() {
    let doc = r#"{
        "core": {"sgw_addr": "10.0.0.1", "mme_addr": "10.0.0.2"},
        "regions": ["R"],
        "megws": [{"id": "m", "address": "192.168.1.1", "region": "R"}],
        "enbs": [{"id": "e", "address": "192.168.10.1", "megw": "m"}],
        "dips": [{"id": "d", "address": "10.200.0.1", "megw": "m"}],
        "vips": ["10.100.1.1"],
        "ues": [{"id": "u", "ip": "172.16.0.9", "enb": "e", "bearers": [5]}]
    }"#;
    let cfg = TopologyConfig::from_json(doc).unwrap();
    build_topology(&cfg).unwrap();
    let mut h = Harness::from_config(&cfg).unwrap();
    assert!(run_named(&mut h, "edge-request").unwrap().passed());

    let broken = doc.replace(r#""megw": "m"}]"#, r#""megw": "nope"}]"#);
    let err = build_topology(&TopologyConfig::from_json(&broken).unwrap()).unwrap_err();
    assert!(matches!(err, ConfigError::Dangling { .. }), "{err}");
}
