//! Parent selection and the assignment of loops to workers for one round.

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::eval::final_candidates;
use crate::model::{branch_best, BranchId, ExplorationGraph, NodeId};
use crate::planner::{Plan, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopKind {
    /// New first-layer node with no parents.
    Root,
    Improve,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub kind: LoopKind,
    pub branch: BranchId,
    pub parents: Vec<NodeId>,
}

/// Branch holding merged nodes; regular branches are `0..branch_count`.
pub fn merge_branch(branch_count: usize) -> BranchId {
    BranchId(branch_count as u32)
}

fn has_executed(graph: &ExplorationGraph, b: BranchId) -> bool {
    graph.branch_nodes(b).any(|n| n.is_executed())
}

/// Parent set for one loop: none for a root, the branch best for an
/// improvement, and per-branch bests plus the global best for a merge.
pub fn select_parents(
    graph: &ExplorationGraph,
    kind: LoopKind,
    branch: BranchId,
) -> Result<Vec<NodeId>, OrchestratorError> {
    match kind {
        LoopKind::Root => Ok(Vec::new()),
        LoopKind::Improve => {
            let best = if graph.branches.contains_key(&branch) {
                branch_best(graph, branch)?
            } else {
                None
            };
            best.map(|n| vec![n.id]).ok_or(OrchestratorError::NoViableParent(branch))
        }
        LoopKind::Merge => {
            let mut parents: Vec<&crate::model::Node> = final_candidates(graph);
            // the global best leads; the rest follow in id order
            if let Some(pos) = parents.iter().position(|n| Some(n.id) == crate::model::global_best(graph).map(|g| g.id)) {
                let lead = parents.remove(pos);
                parents.insert(0, lead);
            }
            if parents.is_empty() {
                return Err(OrchestratorError::NoViableParent(branch));
            }
            Ok(parents.into_iter().map(|n| n.id).collect())
        }
    }
}

pub struct RoundShape {
    pub branch_count: usize,
    pub worker_count: usize,
    pub max_merge_attempts: usize,
}

/// Loops for the next round: at most one per branch so every branch's
/// backend stream stays sequential.
pub fn plan_round(
    graph: &ExplorationGraph,
    plan: &Plan,
    shape: &RoundShape,
) -> Vec<Assignment> {
    let k = shape.branch_count;
    let w = shape.worker_count.max(1);
    let regular: Vec<BranchId> = (0..k as u32).map(BranchId).collect();
    let rootless: Vec<BranchId> = regular.iter().copied().filter(|b| !has_executed(graph, *b)).collect();
    let mut out: Vec<Assignment> = Vec::new();
    let mut used = std::collections::BTreeSet::new();
    let mut push = |out: &mut Vec<Assignment>, kind: LoopKind, branch: BranchId, graph: &ExplorationGraph| {
        if out.len() >= w || !used.insert(branch) {
            return;
        }
        if let Ok(parents) = select_parents(graph, kind, branch) {
            out.push(Assignment { kind, branch, parents });
        }
    };

    let mb = merge_branch(k);
    if plan.stage == Stage::Merge {
        let merge_nodes: Vec<bool> = graph.branch_nodes(mb).map(|n| n.is_executed()).collect();
        let merged = merge_nodes.iter().any(|e| *e);
        let regular_bests = regular.iter().filter(|b| has_executed(graph, **b)).count();
        if !merged && merge_nodes.len() < shape.max_merge_attempts && regular_bests >= 2 {
            push(&mut out, LoopKind::Merge, mb, graph);
        } else if merged && merge_nodes.len() - merge_nodes.iter().position(|e| *e).unwrap_or(0) == 1 {
            // one improvement pass on the first merged node
            push(&mut out, LoopKind::Improve, mb, graph);
        }
    } else {
        for b in &rootless {
            push(&mut out, LoopKind::Root, *b, graph);
        }
    }

    let live: Vec<BranchId> = regular
        .iter()
        .copied()
        .filter(|b| !graph.pruned.contains(b) && has_executed(graph, *b))
        .collect();
    if !live.is_empty() {
        let start = (graph.loop_counter as usize) % live.len();
        for i in 0..live.len() {
            push(&mut out, LoopKind::Improve, live[(start + i) % live.len()], graph);
        }
    }
    if out.is_empty() {
        // nothing runnable: retry roots so the run can still produce a solution
        for b in &rootless {
            push(&mut out, LoopKind::Root, *b, graph);
        }
    }
    out
}
