use std::collections::{BTreeMap, BTreeSet};

use crate::database::{DatabaseSnapshot, MarkingSequence};

use super::grid::PointGrid;
use super::world::{World, REFERENCE_MERGE_RADIUS};

/// Maps database positions back to the world's true markings.
#[derive(Clone, Debug)]
pub struct TruthIndex<'w> {
    world: &'w World,
    grid: PointGrid,
    radius: f64,
}

impl<'w> TruthIndex<'w> {
    pub fn new(world: &'w World, radius: f64) -> Self {
        let grid = PointGrid::new(
            radius.max(1.0) * 2.0,
            world.markings.iter().map(|m| [m.position.x, m.position.y]),
        );
        Self {
            world,
            grid,
            radius,
        }
    }

    /// Nearest true marking within the radius (ties: smallest id).
    pub fn marking_at(&self, x: f64, y: f64) -> Option<u64> {
        self.grid
            .within([x, y], self.radius)
            .into_iter()
            .map(|i| {
                let p = self.world.markings[i].position;
                ((p.x - x).hypot(p.y - y), i as u64)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }

    /// Ordered true marking ids of a sequence; `None` if any entry is clutter.
    pub fn sequence_truth(&self, seq: &MarkingSequence) -> Option<Vec<u64>> {
        seq.entries
            .iter()
            .map(|e| self.marking_at(e.position.x, e.position.y))
            .collect()
    }
}

/// Pairs of sequences whose entries are the same ordered tuple of physical
/// markings. Entries are linked to the nearest true marking within the
/// reference merge radius.
pub fn ground_truth_pairs(world: &World, snap: &DatabaseSnapshot) -> BTreeSet<(u64, u64)> {
    ground_truth_pairs_within(world, snap, REFERENCE_MERGE_RADIUS)
}

pub fn ground_truth_pairs_within(
    world: &World,
    snap: &DatabaseSnapshot,
    radius: f64,
) -> BTreeSet<(u64, u64)> {
    let index = TruthIndex::new(world, radius);
    let mut groups: BTreeMap<Vec<u64>, Vec<u64>> = BTreeMap::new();
    for seq in snap.sequences() {
        if let Some(key) = index.sequence_truth(seq) {
            groups.entry(key).or_default().push(seq.sequence_id);
        }
    }
    let mut pairs = BTreeSet::new();
    for ids in groups.values() {
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                pairs.insert((a, b));
            }
        }
    }
    pairs
}
