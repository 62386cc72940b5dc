//! Time-aware planning: which stage the loop is in, which heavy techniques are
//! allowed, how much novelty to ask for and how long one execution may run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BranchId, ExplorationGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("budget exhausted: elapsed {elapsed_s}s of {budget_s}s")]
    BudgetExhausted { elapsed_s: f64, budget_s: f64 },
    #[error("invalid planner input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Draft,
    Improve,
    Merge,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Draft => "Draft",
            Stage::Improve => "Improve",
            Stage::Merge => "Merge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub stage: Stage,
    pub allow_ensemble: bool,
    pub allow_cross_validation: bool,
    pub novelty_bias: f64,
    pub per_execution_cap_s: f64,
    pub debug_sample_fraction: f64,
    pub target_branch: Option<BranchId>,
    /// Budget left when the plan was made.
    pub remaining_s: f64,
}

impl Plan {
    pub fn with_target(&self, target: Option<BranchId>) -> Plan {
        Plan {
            target_branch: target,
            ..self.clone()
        }
    }
}

/// Planner thresholds. Defaults reproduce the 12-hour reference schedule and
/// scale proportionally to other budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Draft lasts at most this long ...
    pub draft_max_s: f64,
    /// ... or this fraction of the budget, whichever is shorter.
    pub draft_fraction: f64,
    /// Final fraction of the budget spent merging.
    pub merge_fraction: f64,
    /// Ensembles / cross-validation unlock at this fraction of the budget.
    pub heavy_unlock_fraction: f64,
    /// Novelty bias reaches zero at this fraction of the budget.
    pub novelty_horizon_fraction: f64,
    pub execution_cap_s: f64,
    /// Share of the remaining budget a single execution may take.
    pub execution_remaining_share: f64,
    pub debug_sample_fraction: f64,
    /// Number of first-layer roots required before leaving Draft.
    pub draft_roots: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            draft_max_s: 3600.0,
            draft_fraction: 0.15,
            merge_fraction: 0.20,
            heavy_unlock_fraction: 4.0 / 12.0,
            novelty_horizon_fraction: 0.5,
            execution_cap_s: 3600.0,
            execution_remaining_share: 0.5,
            debug_sample_fraction: 0.10,
            draft_roots: 3,
        }
    }
}

/// Number of branches whose first layer has produced an executed node.
pub fn established_roots(graph: &ExplorationGraph) -> usize {
    graph
        .branch_ids()
        .filter(|b| graph.branch_nodes(*b).any(|n| n.parent_ids.is_empty() && n.is_executed()))
        .count()
}

pub fn stage_at(elapsed_s: f64, budget_s: f64, roots: usize, cfg: &PlannerConfig) -> Stage {
    if elapsed_s >= budget_s * (1.0 - cfg.merge_fraction) {
        Stage::Merge
    } else if elapsed_s < cfg.draft_max_s.min(cfg.draft_fraction * budget_s) || roots < cfg.draft_roots {
        Stage::Draft
    } else {
        Stage::Improve
    }
}

/// Pure function of its inputs. `target_branch` is a round-robin pick over
/// the unpruned branches; the coordinator may override it per worker.
pub fn make_plan(
    elapsed_s: f64,
    budget_s: f64,
    graph: &ExplorationGraph,
    cfg: &PlannerConfig,
) -> Result<Plan, PlanError> {
    if !(budget_s > 0.0) || !(elapsed_s >= 0.0) {
        return Err(PlanError::Invalid(format!(
            "elapsed {elapsed_s}s, budget {budget_s}s"
        )));
    }
    if elapsed_s >= budget_s {
        return Err(PlanError::BudgetExhausted { elapsed_s, budget_s });
    }
    let stage = stage_at(elapsed_s, budget_s, established_roots(graph), cfg);
    let heavy = stage != Stage::Draft && elapsed_s >= cfg.heavy_unlock_fraction * budget_s;
    let remaining_s = budget_s - elapsed_s;
    let novelty_bias = (1.0 - elapsed_s / (cfg.novelty_horizon_fraction * budget_s)).max(0.0);

    let live: Vec<BranchId> = graph
        .branch_ids()
        .filter(|b| !graph.pruned.contains(b))
        .collect();
    let target_branch = if live.is_empty() {
        None
    } else {
        Some(live[(graph.loop_counter as usize) % live.len()])
    };

    Ok(Plan {
        stage,
        allow_ensemble: heavy,
        allow_cross_validation: heavy,
        novelty_bias,
        per_execution_cap_s: cfg
            .execution_cap_s
            .min(cfg.execution_remaining_share * remaining_s),
        debug_sample_fraction: cfg.debug_sample_fraction,
        target_branch,
        remaining_s,
    })
}
