use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Axial hex coordinate `(q, r)`.
pub type Axial = (i32, i32);

/// The six axial neighbour offsets.
pub const NEIGHBORS: [Axial; 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

pub fn neighbors(c: Axial) -> impl Iterator<Item = Axial> {
    NEIGHBORS.iter().map(move |&(dq, dr)| (c.0 + dq, c.1 + dr))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mec {
    pub id: usize,
    pub center: Axial,
    pub capacity: u32,
    pub region: usize,
    /// Center first, then the six neighbours.
    pub cells: [Axial; 7],
}

/// Hex cells tiled by 7-cell MEC "flowers", grouped into regions.
///
/// Flower centres sit on the lattice spanned by `(2, 1)` and `(-1, 3)`, so
/// flowers cover the plane without gaps or overlaps. Each region is a
/// compact block of `cols x rows` flowers; blocks are laid side by side.
#[derive(Debug, Clone)]
pub struct HexGrid {
    pub mecs: Vec<Mec>,
    pub regions: Vec<Vec<usize>>,
    cell_mec: HashMap<Axial, usize>,
}

impl HexGrid {
    /// `capacities[i]` is the capacity of the i-th MEC of every region.
    pub fn new(regions_count: usize, capacities: &[u32]) -> Self {
        let per_region = capacities.len();
        let cols = (per_region as f64).sqrt().ceil() as usize;
        let mut mecs = Vec::with_capacity(regions_count * per_region);
        let mut regions = Vec::with_capacity(regions_count);
        let mut cell_mec = HashMap::new();
        for k in 0..regions_count {
            let mut members = Vec::with_capacity(per_region);
            for (i, &capacity) in capacities.iter().enumerate() {
                let a = (k * cols + i % cols) as i32;
                let b = (i / cols) as i32;
                let center = (2 * a - b, a + 3 * b);
                let mut cells = [center; 7];
                for (slot, n) in cells[1..].iter_mut().zip(neighbors(center)) {
                    *slot = n;
                }
                let id = mecs.len();
                for c in cells {
                    let prev = cell_mec.insert(c, id);
                    debug_assert!(prev.is_none(), "flowers overlap at {c:?}");
                }
                mecs.push(Mec { id, center, capacity, region: k, cells });
                members.push(id);
            }
            regions.push(members);
        }
        Self { mecs, regions, cell_mec }
    }

    pub fn cell_count(&self) -> usize {
        self.cell_mec.len()
    }

    pub fn contains(&self, c: Axial) -> bool {
        self.cell_mec.contains_key(&c)
    }

    /// MEC whose flower contains `c`.
    pub fn mec_of(&self, c: Axial) -> Option<usize> {
        self.cell_mec.get(&c).copied()
    }

    pub fn region_of_cell(&self, c: Axial) -> Option<usize> {
        self.mec_of(c).map(|m| self.mecs[m].region)
    }

    /// Neighbours of `c` that lie on the grid.
    pub fn valid_neighbors(&self, c: Axial) -> Vec<Axial> {
        neighbors(c).filter(|n| self.contains(*n)).collect()
    }
}
