use megw::sim::{build_world, hashed_mec, replication_rng, run_replication, Policy, SimConfig};
use proptest::prelude::*;

fn small(seed: u64, rate: f64) -> SimConfig {
    SimConfig { users_per_capacity: 60, steps: 15, migration_rate: rate, seed, ..SimConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn same_trace_never_migrates_more_with_regions(seed in any::<u64>(), rate in 0.0f64..0.5) {
        let (with, without) = run_replication(&small(seed, rate), &mut replication_rng(seed, 0)).unwrap();
        for (w, wo) in with.iter().zip(&without) {
            prop_assert!(w.migrations <= wo.migrations, "t={}: {} > {}", w.t, w.migrations, wo.migrations);
        }
    }

    #[test]
    fn population_ratio_and_stickiness(seed in any::<u64>(), rate in 0.0f64..0.5, policy in prop_oneof![Just(Policy::WithRegions), Just(Policy::WithoutRegions)]) {
        let cfg = SimConfig { policy, ..small(seed, rate) };
        let mut rng = replication_rng(seed, 1);
        let mut world = build_world(&cfg, &mut rng).unwrap();
        let start = world.users.clone();
        let mut changed_region = vec![false; start.len()];
        for _ in 0..cfg.steps {
            let m = world.step(&mut rng);
            prop_assert_eq!(world.loads().iter().sum::<u64>() as usize, cfg.population());
            let all_served = world.loads().iter().all(|&l| l > 0);
            if all_served {
                prop_assert!(m.min_max_ratio > 0.0 && m.min_max_ratio <= 1.0);
            } else {
                prop_assert_eq!(m.min_max_ratio, 0.0);
            }
            for (i, u) in world.users.iter().enumerate() {
                let home = world.grid.region_of_cell(start[i].cell);
                changed_region[i] |= world.grid.region_of_cell(u.cell) != home;
            }
        }
        for (i, u) in world.users.iter().enumerate() {
            match policy {
                Policy::WithRegions => {
                    let region = world.grid.region_of_cell(u.cell).unwrap();
                    prop_assert_eq!(u.serving_mec, hashed_mec(&world.grid, region, u.id));
                    if !changed_region[i] {
                        prop_assert_eq!(u.serving_mec, start[i].serving_mec);
                    }
                }
                Policy::WithoutRegions => prop_assert_eq!(Some(u.serving_mec), world.grid.mec_of(u.cell)),
            }
        }
    }
}

#[test]
fn both_policies_see_the_same_users() {
    let cfg = small(3, 0.1);
    let a = build_world(&SimConfig { policy: Policy::WithRegions, ..cfg.clone() }, &mut replication_rng(3, 0)).unwrap();
    let b = build_world(&SimConfig { policy: Policy::WithoutRegions, ..cfg }, &mut replication_rng(3, 0)).unwrap();
    let cells = |w: &megw::sim::SimWorld| w.users.iter().map(|u| (u.id, u.cell)).collect::<Vec<_>>();
    assert_eq!(cells(&a), cells(&b));
    assert_eq!(a.min_max_ratio(), 1.0);
    assert_eq!(b.min_max_ratio(), 1.0);
}
