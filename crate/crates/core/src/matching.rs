//! Object correspondence between two detection sets.
//!
//! Identical object ids are paired first. Anything left over, including ids
//! that occur more than once on either side, is paired greedily by ascending
//! distance among detections of the same category within a gate.

use std::collections::BTreeMap;

use crate::trace::{ObjectDetection, ObjectId};

/// Default correspondence gate, meters.
pub const CORRESPONDENCE_GATE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Correspondence {
    pub pairs: Vec<Pair>,
    pub left_only: Vec<usize>,
    pub right_only: Vec<usize>,
}

fn id_counts(dets: &[ObjectDetection]) -> BTreeMap<ObjectId, usize> {
    let mut counts = BTreeMap::new();
    for d in dets {
        *counts.entry(d.object_id).or_insert(0) += 1;
    }
    counts
}

/// Pairs `left` with `right`.
///
/// When `gate_id_pairs` is set, an id pair farther apart than `gate` is
/// rejected and both detections fall through to the nearest-neighbour stage.
pub fn correspond(
    left: &[ObjectDetection],
    right: &[ObjectDetection],
    gate: f64,
    gate_id_pairs: bool,
) -> Correspondence {
    let lc = id_counts(left);
    let rc = id_counts(right);
    let mut left_used = vec![false; left.len()];
    let mut right_used = vec![false; right.len()];
    let mut pairs = Vec::new();

    let right_by_id: BTreeMap<ObjectId, usize> = right
        .iter()
        .enumerate()
        .filter(|(_, d)| rc[&d.object_id] == 1)
        .map(|(i, d)| (d.object_id, i))
        .collect();
    for (li, d) in left.iter().enumerate() {
        if lc[&d.object_id] != 1 {
            continue;
        }
        if let Some(&ri) = right_by_id.get(&d.object_id) {
            if gate_id_pairs && d.position.distance(&right[ri].position) > gate {
                continue;
            }
            left_used[li] = true;
            right_used[ri] = true;
            pairs.push(Pair { left: li, right: ri });
        }
    }

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (li, l) in left.iter().enumerate().filter(|(i, _)| !left_used[*i]) {
        for (ri, r) in right.iter().enumerate().filter(|(i, _)| !right_used[*i]) {
            if l.category != r.category {
                continue;
            }
            let d = l.position.distance(&r.position);
            if d <= gate {
                candidates.push((d, li, ri));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, li, ri) in candidates {
        if !left_used[li] && !right_used[ri] {
            left_used[li] = true;
            right_used[ri] = true;
            pairs.push(Pair { left: li, right: ri });
        }
    }

    pairs.sort_by_key(|p| p.left);
    Correspondence {
        pairs,
        left_only: (0..left.len()).filter(|i| !left_used[*i]).collect(),
        right_only: (0..right.len()).filter(|i| !right_used[*i]).collect(),
    }
}
