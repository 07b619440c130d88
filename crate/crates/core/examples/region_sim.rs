//! Step one world under each policy with the same seed and print how many
//! applications migrate and how balanced the MECs stay.

use megw::sim::{build_world, replication_rng, Policy, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for policy in Policy::BOTH {
        let cfg = SimConfig { policy, migration_rate: 0.05, steps: 30, ..SimConfig::default() };
        let mut rng = replication_rng(cfg.seed, 0);
        let mut world = build_world(&cfg, &mut rng)?;
        println!("{}: {} users on {} MECs, loads {:?}", policy.name(), world.users.len(), world.grid.mecs.len(), world.loads());
        for _ in 0..cfg.steps {
            let m = world.step(&mut rng);
            if m.t % 10 == 0 {
                println!(
                    "  t={:>2} migrations={:>3} total={:>5} min/max={:.3}",
                    m.t, m.migrations, m.cumulative_migrations, m.min_max_ratio
                );
            }
        }
    }
    Ok(())
}
