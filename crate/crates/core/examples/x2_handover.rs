//! Run the three X2 handover scenarios on the sample topology and report
//! the silence window, the serving gateway before and after, and any
//! migration notice.

use megw::harness::{run_named, Action, Harness, StepOutcome, TopologyConfig, TraceExt};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in ["x2-same-megw", "x2-same-region", "x2-cross-region"] {
        let mut h = Harness::from_config(&TopologyConfig::sample())?;
        let report = run_named(&mut h, name)?;
        for step in &report.steps {
            let StepOutcome::X2Handover { outcome } = step else { continue };
            println!("{name}: {} -> {} ({:?})", outcome.old_enb, outcome.new_enb, outcome.scenario);
            let t = &outcome.trace;
            let silenced = t.first_of(Action::Silenced).map(|e| e.tick);
            let reactivated = t.first_of(Action::Reactivated).map(|e| e.tick);
            println!("  silent from tick {silenced:?} to {reactivated:?}, {} notice(s)", t.count(Action::MigrationNotified));
            for f in &outcome.flows {
                println!(
                    "  bearer {}: {:?}/{:?} -> {:?}/{:?}, probe in window dropped: {}",
                    f.bearer,
                    f.serving_before.as_ref().map(|m| m.as_str()),
                    f.dip_before,
                    f.serving_after.as_ref().map(|m| m.as_str()),
                    f.dip_after,
                    f.window_probe.as_ref().is_some_and(|p| p.dropped)
                );
            }
        }
        println!("  {}", if report.passed() { "ok".to_string() } else { report.failures.join("; ") });
    }
    Ok(())
}
