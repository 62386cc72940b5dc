use std::collections::BTreeSet;

use crate::model::{branch_best, global_best, BranchId, ExplorationGraph, ScoreRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRule {
    pub enabled: bool,
    pub margin: f64,
    pub patience: u32,
    /// Branches with ids at or above this (the merge branch) are never pruned.
    pub regular_branches: u32,
}

/// Relative shortfall of `branch` behind `best` (0 when level or ahead).
/// Falls back to the absolute gap when the best value is zero.
pub fn relative_gap(branch: &ScoreRecord, best: &ScoreRecord) -> f64 {
    let raw = if best.higher_is_better {
        best.value - branch.value
    } else {
        branch.value - best.value
    };
    let scale = best.value.abs();
    let gap = if scale > 0.0 { raw / scale } else { raw };
    gap.max(0.0)
}

/// Updates the trailing counter of the branch that just committed a loop
/// and returns the branches pruned by this update. A branch is pruned once
/// its best has trailed the global best by more than the margin for
/// `patience` consecutive loops of its own. The branch holding the global
/// best is exempt, and nothing happens until two branches have executed nodes.
pub fn prune_branches(graph: &mut ExplorationGraph, rule: &PruneRule, committed: BranchId) -> BTreeSet<BranchId> {
    let mut newly = BTreeSet::new();
    if !rule.enabled {
        return newly;
    }
    let Some(best_node) = global_best(graph) else {
        return newly;
    };
    let Some(best) = best_node.score.clone() else {
        return newly;
    };
    let scored: Vec<(BranchId, ScoreRecord)> = graph
        .branch_ids()
        .filter(|b| b.0 < rule.regular_branches)
        .filter_map(|b| {
            branch_best(graph, b)
                .ok()
                .flatten()
                .and_then(|n| n.score.clone())
                .map(|s| (b, s))
        })
        .collect();
    if scored.len() < 2 {
        return newly;
    }
    // the best regular branch stands in for the global best when a merged node leads
    let leader = scored
        .iter()
        .min_by(|a, b| relative_gap(&a.1, &best).total_cmp(&relative_gap(&b.1, &best)).then(a.0.cmp(&b.0)))
        .map(|(b, _)| *b);
    for (b, s) in scored {
        if b != committed || graph.pruned.contains(&b) {
            continue;
        }
        let counter = graph.trailing.entry(b).or_insert(0);
        if Some(b) != leader && relative_gap(&s, &best) > rule.margin {
            *counter += 1;
        } else {
            *counter = 0;
        }
        if *counter >= rule.patience {
            graph.pruned.insert(b);
            newly.insert(b);
        }
    }
    newly
}
