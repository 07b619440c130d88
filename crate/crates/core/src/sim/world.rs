use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grid::{Axial, HexGrid};
use crate::steering::rendezvous::select_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Serving MEC chosen by hashing within the region; changes only when
    /// the user crosses into another region.
    WithRegions,
    /// Serving MEC is always the MEC covering the user's cell.
    WithoutRegions,
}

impl Policy {
    pub const BOTH: [Policy; 2] = [Policy::WithRegions, Policy::WithoutRegions];

    pub fn name(self) -> &'static str {
        match self {
            Policy::WithRegions => "with_regions",
            Policy::WithoutRegions => "without_regions",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub regions_count: usize,
    pub mecs_per_region: usize,
    /// Capacity of each MEC within a region; one entry per MEC.
    pub capacities: Vec<u32>,
    pub users_per_capacity: u32,
    pub steps: usize,
    /// Fraction of the population moved to a neighbour cell per step.
    pub migration_rate: f64,
    pub policy: Policy,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            regions_count: 3,
            mecs_per_region: 4,
            capacities: vec![1, 1, 2, 2],
            users_per_capacity: 500,
            steps: 60,
            migration_rate: 0.05,
            policy: Policy::WithRegions,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{got} capacities given for {want} MECs per region")]
    CapacityCount { want: usize, got: usize },
    #[error("migration rate {0} is outside [0, 1]")]
    Rate(f64),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.regions_count == 0 {
            return Err(ConfigError::NotPositive("regions_count"));
        }
        if self.mecs_per_region == 0 {
            return Err(ConfigError::NotPositive("mecs_per_region"));
        }
        if self.capacities.len() != self.mecs_per_region {
            return Err(ConfigError::CapacityCount { want: self.mecs_per_region, got: self.capacities.len() });
        }
        if self.capacities.contains(&0) {
            return Err(ConfigError::NotPositive("capacity"));
        }
        if self.users_per_capacity == 0 {
            return Err(ConfigError::NotPositive("users_per_capacity"));
        }
        if !(0.0..=1.0).contains(&self.migration_rate) {
            return Err(ConfigError::Rate(self.migration_rate));
        }
        Ok(())
    }

    pub fn population(&self) -> usize {
        self.regions_count * self.capacities.iter().map(|&c| (c * self.users_per_capacity) as usize).sum::<usize>()
    }

    /// Users moved per step.
    pub fn moves_per_step(&self) -> usize {
        (self.migration_rate * self.population() as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: u64,
    pub cell: Axial,
    pub serving_mec: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub t: usize,
    pub migrations: u64,
    pub cumulative_migrations: u64,
    pub min_max_ratio: f64,
}

/// One user relocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub user: usize,
    pub to: Axial,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    pub grid: HexGrid,
    pub users: Vec<User>,
    pub policy: Policy,
    loads: Vec<u64>,
    t: usize,
    cumulative: u64,
    moves_per_step: usize,
}

fn mec_key(mec: usize) -> [u8; 4] {
    (mec as u32).to_be_bytes()
}

/// Weighted rendezvous choice of a MEC in `region` for `user_id`.
pub fn hashed_mec(grid: &HexGrid, region: usize, user_id: u64) -> usize {
    let members = &grid.regions[region];
    let keys: Vec<[u8; 4]> = members.iter().map(|&m| mec_key(m)).collect();
    let idx = select_index(&user_id.to_be_bytes(), keys.iter().zip(members).map(|(k, &m)| (&k[..], grid.mecs[m].capacity as f64)))
        .expect("regions are non-empty with positive capacities");
    members[idx]
}

/// Builds the grid and places `users_per_capacity x capacity` users
/// uniformly over each MEC's flower.
///
/// Placement does not depend on the policy, so two worlds built from the
/// same RNG state hold the same users in the same cells. Without regions a
/// user is served by the MEC of its cell. With regions, user ids are drawn
/// in sequence and each is kept only while the MEC it hashes to still has
/// room, so the hashed MECs start exactly at their quota.
pub fn build_world<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<SimWorld, ConfigError> {
    cfg.validate()?;
    let grid = HexGrid::new(cfg.regions_count, &cfg.capacities);
    let mut users = Vec::with_capacity(cfg.population());
    let mut next_id = 0u64;
    for (region, members) in grid.regions.iter().enumerate() {
        let mut located = Vec::new();
        for &m in members {
            let mec = &grid.mecs[m];
            for _ in 0..mec.capacity * cfg.users_per_capacity {
                located.push((*mec.cells.choose(rng).expect("seven cells"), m));
            }
        }
        located.shuffle(rng);
        let mut quota: Vec<u64> = grid.mecs.iter().map(|m| (m.capacity * cfg.users_per_capacity) as u64).collect();
        let mut left = located.len();
        let mut located = located.into_iter();
        while left > 0 {
            let id = next_id;
            next_id += 1;
            let hashed = hashed_mec(&grid, region, id);
            if quota[hashed] == 0 {
                continue;
            }
            quota[hashed] -= 1;
            left -= 1;
            let (cell, geographic) = located.next().expect("one located user per quota slot");
            let serving_mec = match cfg.policy {
                Policy::WithRegions => hashed,
                Policy::WithoutRegions => geographic,
            };
            users.push(User { id, cell, serving_mec });
        }
    }
    let mut loads = vec![0u64; grid.mecs.len()];
    for u in &users {
        loads[u.serving_mec] += 1;
    }
    Ok(SimWorld { grid, users, policy: cfg.policy, loads, t: 0, cumulative: 0, moves_per_step: cfg.moves_per_step() })
}

impl SimWorld {
    pub fn loads(&self) -> &[u64] {
        &self.loads
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Least utilisation over greatest; 0 when some MEC serves nobody.
    pub fn min_max_ratio(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (m, &load) in self.grid.mecs.iter().zip(&self.loads) {
            if load == 0 {
                return 0.0;
            }
            let u = load as f64 / m.capacity as f64;
            lo = lo.min(u);
            hi = hi.max(u);
        }
        lo / hi
    }

    pub fn metrics(&self, migrations: u64) -> StepMetrics {
        StepMetrics { t: self.t, migrations, cumulative_migrations: self.cumulative, min_max_ratio: self.min_max_ratio() }
    }

    /// Picks distinct users and a uniformly random on-grid neighbour cell
    /// for each. Depends only on positions, never on the policy.
    pub fn draw_moves<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<Move> {
        let count = count.min(self.users.len());
        sample(rng, self.users.len(), count)
            .into_iter()
            .map(|user| {
                let options = self.grid.valid_neighbors(self.users[user].cell);
                Move { user, to: *options.choose(rng).expect("every cell has an on-grid neighbour") }
            })
            .collect()
    }

    /// Relocates users and reassigns serving MECs under the world's policy.
    pub fn apply_moves(&mut self, moves: &[Move]) -> StepMetrics {
        let mut migrations = 0;
        for mv in moves {
            let user = &mut self.users[mv.user];
            let from_region = self.grid.region_of_cell(user.cell);
            user.cell = mv.to;
            let geographic = self.grid.mec_of(mv.to).expect("moves stay on the grid");
            let serving = match self.policy {
                Policy::WithoutRegions => geographic,
                Policy::WithRegions => {
                    let to_region = self.grid.mecs[geographic].region;
                    if from_region == Some(to_region) {
                        user.serving_mec
                    } else {
                        hashed_mec(&self.grid, to_region, user.id)
                    }
                }
            };
            if serving != user.serving_mec {
                self.loads[user.serving_mec] -= 1;
                self.loads[serving] += 1;
                user.serving_mec = serving;
                migrations += 1;
            }
        }
        self.t += 1;
        self.cumulative += migrations;
        self.metrics(migrations)
    }

    /// One simulated minute.
    pub fn step<R: Rng>(&mut self, rng: &mut R) -> StepMetrics {
        let moves = self.draw_moves(rng, self.moves_per_step);
        self.apply_moves(&moves)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(policy: Policy) -> SimConfig {
        SimConfig { policy, ..SimConfig::default() }
    }

    #[test]
    fn initial_ratio_is_one() {
        for p in Policy::BOTH {
            let w = build_world(&cfg(p), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(w.min_max_ratio(), 1.0);
            assert_eq!(w.users.len(), 9_000);
        }
    }

    #[test]
    fn capacity_two_mec_starts_with_1000_users_nearby() {
        let w = build_world(&cfg(Policy::WithoutRegions), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let m = &w.grid.mecs[2];
        assert_eq!(m.capacity, 2);
        let near = w.users.iter().filter(|u| m.cells.contains(&u.cell)).count();
        assert_eq!(near, 1000);
    }

    #[test]
    fn degenerate_world() {
        let c = SimConfig { regions_count: 1, mecs_per_region: 1, capacities: vec![1], ..SimConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut w = build_world(&c, &mut rng).unwrap();
        assert_eq!(w.users.len(), 500);
        assert!(w.users.iter().all(|u| u.serving_mec == 0));
        let m = w.step(&mut rng);
        assert_eq!((m.migrations, m.min_max_ratio), (0, 1.0));
    }

    #[test]
    fn zero_rate_changes_nothing() {
        let c = SimConfig { migration_rate: 0.0, ..SimConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut w = build_world(&c, &mut rng).unwrap();
        let before = w.users.clone();
        let m = w.step(&mut rng);
        assert_eq!((m.migrations, m.min_max_ratio), (0, 1.0));
        assert_eq!(w.users, before);
    }

    #[test]
    fn bad_configs() {
        let bad = |c: SimConfig| build_world(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(bad(SimConfig { regions_count: 0, ..SimConfig::default() }), ConfigError::NotPositive("regions_count"));
        assert!(matches!(bad(SimConfig { capacities: vec![1], ..SimConfig::default() }), ConfigError::CapacityCount { .. }));
        assert_eq!(bad(SimConfig { migration_rate: 1.5, ..SimConfig::default() }), ConfigError::Rate(1.5));
    }

    /// Two regions of two unit-capacity MECs each; one user.
    fn micro(policy: Policy) -> SimWorld {
        let c = SimConfig {
            regions_count: 2,
            mecs_per_region: 2,
            capacities: vec![1, 1],
            users_per_capacity: 1,
            policy,
            ..SimConfig::default()
        };
        build_world(&c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    /// A cell of `to` adjacent to a cell of `from`, and that cell.
    fn border(w: &SimWorld, from: usize, to: usize) -> (Axial, Axial) {
        for a in w.grid.mecs[from].cells {
            for b in w.grid.valid_neighbors(a) {
                if w.grid.mec_of(b) == Some(to) {
                    return (a, b);
                }
            }
        }
        panic!("MECs {from} and {to} are not adjacent");
    }

    fn place(w: &mut SimWorld, user: usize, cell: Axial) {
        // put the user at `cell` keeping its serving MEC and load consistent
        w.users[user].cell = cell;
    }

    #[test]
    fn move_inside_region_across_flowers() {
        let mut counts = Vec::new();
        for p in Policy::BOTH {
            let mut w = micro(p);
            let (a, b) = border(&w, 0, 1);
            let u = w.users.iter().position(|u| w.grid.region_of_cell(u.cell) == Some(0)).unwrap();
            let geographic = w.grid.mec_of(w.users[u].cell).unwrap();
            place(&mut w, u, a);
            if p == Policy::WithoutRegions {
                // keep the without-regions invariant after teleporting
                w.loads[geographic] -= 1;
                w.loads[0] += 1;
                w.users[u].serving_mec = 0;
            }
            counts.push(w.apply_moves(&[Move { user: u, to: b }]).migrations);
        }
        assert_eq!(counts, vec![0, 1]);
    }

    #[test]
    fn move_across_regions() {
        let mut counts = Vec::new();
        for p in Policy::BOTH {
            let mut w = micro(p);
            let (a, b) = border(&w, 1, 2);
            assert_ne!(w.grid.mecs[1].region, w.grid.mecs[2].region);
            let u = w.users.iter().position(|u| w.grid.region_of_cell(u.cell) == Some(0)).unwrap();
            let old = w.users[u].serving_mec;
            place(&mut w, u, a);
            if p == Policy::WithoutRegions {
                w.loads[old] -= 1;
                w.loads[1] += 1;
                w.users[u].serving_mec = 1;
            }
            counts.push(w.apply_moves(&[Move { user: u, to: b }]).migrations);
        }
        assert_eq!(counts, vec![1, 1]);
    }

    #[test]
    fn population_is_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = build_world(&SimConfig { migration_rate: 0.2, ..SimConfig::default() }, &mut rng).unwrap();
        for _ in 0..10 {
            w.step(&mut rng);
            assert_eq!(w.loads().iter().sum::<u64>(), 9_000);
        }
    }
}
