use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{Action, EdgeOutcome, HandoverOutcome, Harness, HarnessError, ProbeOutcome, Topology, TraceEvent, TraceExt};
use crate::control::{classify_handover, HandoverScenario};

/// Names accepted by [`named_script`].
pub const SCENARIOS: &[&str] = &["attach", "edge-request", "multi-bearer", "x2-same-megw", "x2-same-region", "x2-cross-region"];

/// One operation of a JSON scenario script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ScenarioStep {
    Attach {
        ue: String,
    },
    EdgeRequest {
        ue: String,
        #[serde(default)]
        bearer: Option<u8>,
        #[serde(default)]
        vip: Option<Ipv4Addr>,
        payload: String,
    },
    Probe {
        ue: String,
        bearer: u8,
    },
    X2Handover {
        ue: String,
        to: String,
    },
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StepOutcome {
    Attach { trace: Vec<TraceEvent> },
    EdgeRequest { payload: String, outcome: EdgeOutcome },
    Probe { outcome: ProbeOutcome },
    X2Handover { outcome: HandoverOutcome },
}

impl StepOutcome {
    pub fn failures(&self) -> Vec<String> {
        match self {
            StepOutcome::Attach { trace } => {
                let mut f = Vec::new();
                let s1ap_clones = trace.with_action(Action::Cloned).iter().filter(|e| e.str_field("event") == Some("s1ap_clone")).count();
                if s1ap_clones != 2 {
                    f.push(format!("attach produced {s1ap_clones} S1AP clones, expected 2"));
                }
                if trace.count(Action::RuleInstalled) != 0 {
                    f.push("attach installed data-plane rules".into());
                }
                f
            }
            StepOutcome::EdgeRequest { payload, outcome } => outcome.failures(payload),
            StepOutcome::Probe { .. } => Vec::new(),
            StepOutcome::X2Handover { outcome } => outcome.failures(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub steps: Vec<StepOutcome>,
    pub failures: Vec<String>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_script(h: &mut Harness, name: &str, script: &[ScenarioStep]) -> Result<ScenarioReport, HarnessError> {
    let default_vip = *h.topology().config.vips.iter().next().ok_or(HarnessError::Unknown { what: "VIP", name: "any".into() })?;
    let mut steps = Vec::new();
    for step in script {
        let out = match step {
            ScenarioStep::Attach { ue } => StepOutcome::Attach { trace: h.run_attach(ue)? },
            ScenarioStep::EdgeRequest { ue, bearer, vip, payload } => {
                let vip = vip.unwrap_or(default_vip);
                let outcome = match bearer {
                    Some(b) => h.run_flow(ue, *b, vip, payload)?,
                    None => h.run_edge_request(ue, vip, payload)?,
                };
                StepOutcome::EdgeRequest { payload: payload.clone(), outcome }
            }
            ScenarioStep::Probe { ue, bearer } => StepOutcome::Probe { outcome: h.inject_probe(ue, *bearer)? },
            ScenarioStep::X2Handover { ue, to } => StepOutcome::X2Handover { outcome: h.run_x2_handover(ue, to)? },
        };
        steps.push(out);
    }
    let failures = steps.iter().flat_map(StepOutcome::failures).collect();
    Ok(ScenarioReport { name: name.to_owned(), steps, failures })
}

/// Finds an eNB whose handover from `from` falls into `want`.
fn target_for(topo: &Topology, from: &str, want: HandoverScenario) -> Option<String> {
    let src = topo.enb(from)?.address;
    topo.config
        .enbs
        .iter()
        .filter(|e| e.id != from)
        .find(|e| classify_handover(src, e.address, &topo.region_map) == Ok(want))
        .map(|e| e.id.clone())
}

/// Builds the script of a named scenario for the first UE of the topology.
pub fn named_script(topo: &Topology, name: &str) -> Result<Vec<ScenarioStep>, HarnessError> {
    let ue = topo.config.ues.first().ok_or(HarnessError::Unknown { what: "UE", name: "any".into() })?;
    let id = ue.id.clone();
    let attach = ScenarioStep::Attach { ue: id.clone() };
    let per_bearer = |payload: &str| -> Vec<ScenarioStep> {
        ue.bearers
            .iter()
            .map(|&b| ScenarioStep::EdgeRequest { ue: id.clone(), bearer: Some(b), vip: None, payload: format!("{payload}-{b}") })
            .collect()
    };
    let handover = |want: HandoverScenario| -> Result<Vec<ScenarioStep>, HarnessError> {
        let to = target_for(topo, &ue.enb, want)
            .ok_or_else(|| HarnessError::Unknown { what: "handover target for", name: format!("{want:?}") })?;
        let mut s = vec![attach.clone()];
        s.extend(per_bearer("hello"));
        s.push(ScenarioStep::X2Handover { ue: id.clone(), to });
        Ok(s)
    };
    Ok(match name {
        "attach" => vec![attach.clone()],
        "edge-request" => {
            vec![attach.clone(), ScenarioStep::EdgeRequest { ue: id.clone(), bearer: None, vip: None, payload: "hello".into() }]
        }
        "multi-bearer" => {
            let mut s = vec![attach.clone()];
            s.extend(per_bearer("hello"));
            s
        }
        "x2-same-megw" => handover(HandoverScenario::SameMegw)?,
        "x2-same-region" => handover(HandoverScenario::SameRegionDifferentMegw)?,
        "x2-cross-region" => handover(HandoverScenario::CrossRegion)?,
        other => return Err(HarnessError::Unknown { what: "scenario", name: other.to_owned() }),
    })
}

pub fn run_named(h: &mut Harness, name: &str) -> Result<ScenarioReport, HarnessError> {
    let script = named_script(h.topology(), name)?;
    let mut report = run_script(h, name, &script)?;
    add_named_checks(&mut report);
    Ok(report)
}

/// Checks that only make sense for a particular named scenario.
pub fn add_named_checks(report: &mut ScenarioReport) {
    if report.name == "multi-bearer" {
        let teids: Vec<_> = report
            .steps
            .iter()
            .filter_map(|s| match s {
                StepOutcome::EdgeRequest { outcome, .. } => outcome.echo_teid,
                _ => None,
            })
            .collect();
        let mut distinct = teids.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != teids.len() {
            report.failures.push(format!("bearers share downstream TEIDs: {teids:?}"));
        }
    }
}
