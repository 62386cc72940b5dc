//! Run summary computed from the trace alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trace::{CommitPayload, EventKind, TraceEvent};
use crate::eval::FinalSelection;
use crate::model::{compare_scores, BranchId, NodeId, ScoreOrdering, ScoreRecord};
use crate::session::CallRecord;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub loops: u64,
    pub executed: u64,
    pub best_node: Option<NodeId>,
    pub best_validation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepUsage {
    pub calls: u64,
    pub errors: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub loops: u64,
    pub executed: u64,
    pub failed: u64,
    pub rounds: u64,
    pub elapsed_s: f64,
    pub branches: BTreeMap<BranchId, BranchSummary>,
    /// Share of loops with an executed parent whose node beat its first parent.
    pub improve_rate: Option<f64>,
    pub first_success_elapsed_s: Option<f64>,
    pub best_validation: Option<ScoreRecord>,
    pub usage: BTreeMap<String, StepUsage>,
    pub final_node: Option<NodeId>,
    pub final_holdout: Option<f64>,
    pub final_failed: bool,
}

pub fn build_report(events: &[TraceEvent]) -> RunReport {
    let mut r = RunReport::default();
    let mut scores: BTreeMap<NodeId, ScoreRecord> = BTreeMap::new();
    let mut improvable = 0u64;
    let mut improved = 0u64;
    for e in events {
        match e.kind {
            EventKind::NodeCommitted => {
                let Ok(p) = serde_json::from_value::<CommitPayload>(e.payload.clone()) else {
                    continue;
                };
                r.loops += 1;
                if let Some(end) = p.round_end_elapsed_s {
                    r.rounds += 1;
                    r.elapsed_s = end;
                }
                let b = r.branches.entry(p.node.branch_id).or_default();
                b.loops += 1;
                let Some(score) = p.node.score.clone().filter(|_| p.node.is_executed()) else {
                    r.failed += 1;
                    continue;
                };
                r.executed += 1;
                b.executed += 1;
                r.first_success_elapsed_s.get_or_insert(p.elapsed_s);
                if b.best_validation.is_none_or(|v| beats(&score, v)) {
                    b.best_validation = Some(score.value);
                    b.best_node = Some(p.node.id);
                }
                if r.best_validation.as_ref().is_none_or(|best| beats(&score, best.value)) {
                    r.best_validation = Some(score.clone());
                }
                if let Some(parent) = p.node.parent_ids.first().and_then(|id| scores.get(id)) {
                    improvable += 1;
                    if matches!(compare_scores(&score, parent), Ok(ScoreOrdering::ABetter)) {
                        improved += 1;
                    }
                }
                scores.insert(p.node.id, score);
            }
            EventKind::BackendCall => {
                let Ok(c) = serde_json::from_value::<CallRecord>(e.payload.clone()) else {
                    continue;
                };
                let u = r.usage.entry(c.step).or_default();
                u.calls += 1;
                u.errors += u64::from(c.error.is_some());
                u.prompt_tokens += c.usage.prompt_tokens;
                u.completion_tokens += c.usage.completion_tokens;
            }
            EventKind::FinalSubmit => match serde_json::from_value::<FinalSelection>(e.payload.clone()) {
                Ok(sel) => {
                    r.final_node = Some(sel.node_id);
                    r.final_holdout = Some(sel.grade.score);
                }
                Err(_) => r.final_failed = true,
            },
            _ => {}
        }
    }
    r.improve_rate = (improvable > 0).then(|| improved as f64 / improvable as f64);
    r
}

fn beats(score: &ScoreRecord, value: f64) -> bool {
    if score.higher_is_better {
        score.value > value
    } else {
        score.value < value
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.prec$}"))
}

impl RunReport {
    /// Plain-text metrics table followed by the per-branch summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let metric = self.best_validation.as_ref().map_or("score", |s| s.metric_name.as_str());
        let rows: Vec<(&str, String)> = vec![
            ("loops", self.loops.to_string()),
            ("executed", self.executed.to_string()),
            ("failed", self.failed.to_string()),
            ("rounds", self.rounds.to_string()),
            ("elapsed_s", format!("{:.1}", self.elapsed_s)),
            ("improve_rate", opt(self.improve_rate, 3)),
            ("first_success_s", opt(self.first_success_elapsed_s, 1)),
            ("best_validation", opt(self.best_validation.as_ref().map(|s| s.value), 4)),
            ("final_node", self.final_node.map_or("-".into(), |n| n.to_string())),
            ("final_holdout", opt(self.final_holdout, 4)),
        ];
        out.push_str(&format!("{:<18} value\n", "metric"));
        for (k, v) in rows {
            out.push_str(&format!("{k:<18} {v}\n"));
        }
        out.push_str(&format!("\n{:<8} {:>6} {:>9} {:>8} {:>12}\n", "branch", "loops", "executed", "best", metric));
        for (b, s) in &self.branches {
            out.push_str(&format!(
                "{:<8} {:>6} {:>9} {:>8} {:>12}\n",
                b.to_string(),
                s.loops,
                s.executed,
                s.best_node.map_or("-".into(), |n| n.to_string()),
                opt(s.best_validation, 4)
            ));
        }
        out.push_str(&format!("\n{:<20} {:>6} {:>6} {:>10} {:>10}\n", "step", "calls", "errors", "prompt", "completion"));
        for (step, u) in &self.usage {
            out.push_str(&format!(
                "{step:<20} {:>6} {:>6} {:>10} {:>10}\n",
                u.calls, u.errors, u.prompt_tokens, u.completion_tokens
            ));
        }
        out
    }
}
