//! Fixed splits, grading, submission checks, multi-candidate re-validation
//! and final selection.

pub mod grade;
pub mod split;
pub mod submission;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use grade::{parse_grade_output, AccuracyGrader, CommandGrader, GradeResult, Grader};
pub use split::{prepare_splits, SplitConfig, SplitManifest, LABEL_FILE};
pub use submission::validate_submission;

use crate::dev::{run_full, Executor, Workspace};
use crate::model::{
    branch_best, compare_scores, global_best, node_ranks_ahead, ExplorationGraph, Node, NodeId, ScoreOrdering,
    ScoreRecord, ScoreSource, TaskSpec,
};
use crate::prompts::{self, Vars};
use crate::session::Session;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("task source data missing: {0}")]
    SourceMissing(PathBuf),
    #[error("failed to write split: {0}")]
    WriteFailure(String),
    #[error("grader failed: {0}")]
    GraderCrash(String),
    #[error("malformed grade output: {0}")]
    MalformedGradeOutput(String),
    #[error("no candidate produced a gradable submission")]
    AllCandidatesFailed,
    #[error("invalid evaluation setup: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraderSpec {
    Accuracy,
    Command { command: Vec<String> },
}

/// Contents of a task directory's `task.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMeta {
    #[serde(default = "default_id")]
    pub id_column: String,
    #[serde(default = "default_label")]
    pub label_column: String,
    pub grader: GraderSpec,
    /// Solutions are synthetic directives rather than programs.
    #[serde(default)]
    pub synthetic: bool,
}

fn default_id() -> String {
    "id".into()
}

fn default_label() -> String {
    "label".into()
}

impl TaskMeta {
    pub fn load(task_dir: &Path) -> Result<Self, EvalError> {
        let path = task_dir.join("task.json");
        let text = fs::read_to_string(&path).map_err(|_| EvalError::SourceMissing(path.clone()))?;
        serde_json::from_str(&text).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))
    }
}

/// Everything needed to re-run and grade a candidate against the holdout.
pub struct Revalidation<'a> {
    pub manifest: &'a SplitManifest,
    pub executor: &'a dyn Executor,
    pub grader: &'a dyn Grader,
    pub task: &'a TaskSpec,
    /// Re-runs happen in `<work_dir>/n<id>`.
    pub work_dir: PathBuf,
    pub cap_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub node_id: NodeId,
    pub validation: Option<f64>,
    pub grade: Option<GradeResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission: Option<PathBuf>,
    pub wall_time_s: f64,
}

impl RankedCandidate {
    pub fn holdout_record(&self, task: &TaskSpec) -> Option<ScoreRecord> {
        self.grade.as_ref().map(|g| task.score(g.score, ScoreSource::Holdout))
    }
}

fn revalidate_one(node: &Node, ctx: &Revalidation<'_>) -> RankedCandidate {
    let mut out = RankedCandidate {
        node_id: node.id,
        validation: node.score.as_ref().map(|s| s.value),
        grade: None,
        failure: None,
        submission: None,
        wall_time_s: 0.0,
    };
    let ws = match Workspace::create(ctx.work_dir.join(format!("n{}", node.id.0)), &ctx.manifest.input_dir) {
        Ok(ws) => ws,
        Err(e) => {
            out.failure = Some(format!("workspace: {e}"));
            return out;
        }
    };
    let result = match run_full(&node.code.text, &ws, ctx.executor, ctx.cap_s) {
        Ok(r) => r,
        Err(e) => {
            out.failure = Some(e.to_string());
            return out;
        }
    };
    out.wall_time_s = result.wall_time_s;
    let Some(path) = result.submission_path.filter(|_| result.exit_ok) else {
        out.failure = Some(result.failure.unwrap_or_else(|| "re-run failed".into()));
        return out;
    };
    let violations = validate_submission(&path, &ctx.manifest.sample_submission_path());
    if !violations.is_empty() {
        out.failure = Some(format!("invalid submission: {}", violations.join("; ")));
        return out;
    }
    match ctx.grader.grade(&path, ctx.manifest) {
        Ok(g) => {
            out.grade = Some(g);
            out.submission = Some(path);
        }
        Err(e) => out.failure = Some(e.to_string()),
    }
    out
}

/// Orders graded candidates best first under the task's direction; ties
/// and failures are ordered by node id, failures after every success.
pub fn rank_candidates(ranked: &mut [RankedCandidate], higher_is_better: bool) {
    ranked.sort_by(|a, b| match (&a.grade, &b.grade) {
        (Some(ga), Some(gb)) => {
            let ord = ga.score.total_cmp(&gb.score);
            let ord = if higher_is_better { ord.reverse() } else { ord };
            ord.then(a.node_id.cmp(&b.node_id))
        }
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.node_id.cmp(&b.node_id),
    });
}

/// Keeps the `k` candidates with the best validation scores, re-runs each
/// against the fixed holdout in parallel, grades them with the same grader
/// and ranks the results.
pub fn validation_select(candidates: &[&Node], ctx: &Revalidation<'_>, k: usize) -> Vec<RankedCandidate> {
    let mut pool: Vec<&Node> = candidates.to_vec();
    pool.sort_by_key(|n| n.id);
    pool.dedup_by_key(|n| n.id);
    pool.sort_by(|a, b| {
        if node_ranks_ahead(a, b) {
            std::cmp::Ordering::Less
        } else if node_ranks_ahead(b, a) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    pool.truncate(k.max(1));
    let mut ranked: Vec<RankedCandidate> = std::thread::scope(|s| {
        let handles: Vec<_> = pool.iter().map(|n| s.spawn(|| revalidate_one(n, ctx))).collect();
        handles
            .into_iter()
            .zip(&pool)
            .map(|(h, n)| {
                h.join().unwrap_or_else(|_| RankedCandidate {
                    node_id: n.id,
                    validation: n.score.as_ref().map(|s| s.value),
                    grade: None,
                    failure: Some("re-validation panicked".into()),
                    submission: None,
                    wall_time_s: 0.0,
                })
            })
            .collect()
    });
    rank_candidates(&mut ranked, ctx.task.higher_is_better);
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct SotaEntry {
    pub node_id: NodeId,
    pub branch: u32,
    pub validation: Option<f64>,
    pub hypothesis: String,
    pub feedback: String,
}

impl SotaEntry {
    pub fn from_node(n: &Node) -> Self {
        SotaEntry {
            node_id: n.id,
            branch: n.branch_id.0,
            validation: n.score.as_ref().map(|s| s.value),
            hypothesis: n.hypothesis.text.clone(),
            feedback: n.feedback.clone(),
        }
    }
}

pub fn format_experiments(entries: &[SotaEntry], metric: &str) -> String {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let score = e.validation.map_or("none".to_string(), |v| format!("{v:.4}"));
            let mut line = format!(
                "[{i}] n{} on b{}, validation {metric} {score}: {}",
                e.node_id.0,
                e.branch,
                e.hypothesis.lines().next().unwrap_or("")
            );
            if !e.feedback.is_empty() {
                line.push_str(&format!("\n    Feedback: {}", e.feedback.replace('\n', " ")));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Best validation score, earliest node on ties.
pub fn offline_sota(entries: &[SotaEntry], higher_is_better: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        let Some(v) = e.validation else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bv = entries[b].validation.expect("scored");
                let cmp = if higher_is_better { v > bv } else { v < bv };
                cmp || (v == bv && e.node_id < entries[b].node_id)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Index from a `{"selected_SOTA_idx": n | null}` reply; `Ok(None)` for null.
pub fn parse_sota_reply(text: &str, len: usize) -> Result<Option<usize>, String> {
    let start = text.find('{').ok_or("no JSON object")?;
    let end = text.rfind('}').ok_or("no JSON object")?;
    let value: Value = serde_json::from_str(&text[start..=end]).map_err(|e| e.to_string())?;
    match value.get("selected_SOTA_idx") {
        Some(Value::Null) => Ok(None),
        Some(v) => {
            let i = v.as_u64().ok_or("index is not a non-negative integer")? as usize;
            if i < len {
                Ok(Some(i))
            } else {
                Err(format!("index {i} out of range for {len} experiments"))
            }
        }
        None => Err("missing selected_SOTA_idx".into()),
    }
}

/// Backend-judged choice among experiments; falls back to [`offline_sota`]
/// when no session is given or the reply cannot be used.
pub fn select_sota(entries: &[SotaEntry], task: &TaskSpec, session: Option<&Session<'_>>) -> Option<usize> {
    if entries.len() <= 1 {
        return (!entries.is_empty()).then_some(0);
    }
    let fallback = || offline_sota(entries, task.higher_is_better);
    let Some(session) = session else {
        return fallback();
    };
    let mut vars = Vars::new();
    vars.insert("task_summary", task.summary());
    vars.insert("experiments", format_experiments(entries, &task.metric_name));
    match session.call(prompts::SELECT_SOTA, &vars) {
        Ok(resp) => match parse_sota_reply(&resp.text, entries.len()) {
            Ok(choice) => choice,
            Err(reason) => {
                tracing::warn!(%reason, "unusable SOTA reply; using offline choice");
                fallback()
            }
        },
        Err(e) => {
            tracing::warn!(error = %e, "SOTA call failed; using offline choice");
            fallback()
        }
    }
}

/// Per-branch bests plus the global best, deduplicated, in id order.
pub fn final_candidates(graph: &ExplorationGraph) -> Vec<&Node> {
    let mut out: Vec<&Node> = graph
        .branch_ids()
        .filter_map(|b| branch_best(graph, b).ok().flatten())
        .chain(global_best(graph))
        .filter(|n| n.is_executed())
        .collect();
    out.sort_by_key(|n| n.id);
    out.dedup_by_key(|n| n.id);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSelection {
    pub node_id: NodeId,
    pub grade: GradeResult,
    pub ranking: Vec<RankedCandidate>,
    pub submission: PathBuf,
    /// Set when several candidates tied on the holdout and the SOTA judgment picked among them.
    pub tie_broken_by_sota: bool,
}

/// Re-validates the final candidates, records their holdout scores on the
/// graph, and copies the winner's submission to `final_dir`.
pub fn final_submit(
    graph: &mut ExplorationGraph,
    ctx: &Revalidation<'_>,
    k: usize,
    session: Option<&Session<'_>>,
    final_dir: &Path,
) -> Result<FinalSelection, EvalError> {
    let candidates = final_candidates(graph);
    if candidates.is_empty() {
        return Err(EvalError::AllCandidatesFailed);
    }
    let ranking = validation_select(&candidates, ctx, k);
    for r in &ranking {
        if let (Some(rec), Some(node)) = (r.holdout_record(ctx.task), graph.nodes.get_mut(&r.node_id)) {
            node.holdout = Some(rec);
        }
    }
    let top = ranking.first().and_then(|r| r.grade.clone()).ok_or(EvalError::AllCandidatesFailed)?;
    let tied: Vec<&RankedCandidate> = ranking
        .iter()
        .take_while(|r| r.grade.as_ref().is_some_and(|g| g.score == top.score))
        .collect();
    let mut winner = tied[0];
    let mut tie_broken_by_sota = false;
    if tied.len() > 1 {
        let entries: Vec<SotaEntry> = tied
            .iter()
            .filter_map(|r| graph.node(r.node_id))
            .map(SotaEntry::from_node)
            .collect();
        if let Some(i) = select_sota(&entries, ctx.task, session) {
            winner = tied[i];
            tie_broken_by_sota = i != 0;
        }
    }
    let source = winner.submission.clone().ok_or(EvalError::AllCandidatesFailed)?;
    fs::create_dir_all(final_dir)?;
    let dest = final_dir.join(crate::dev::executor::SUBMISSION_FILE);
    fs::copy(&source, &dest)?;
    Ok(FinalSelection {
        node_id: winner.node_id,
        grade: winner.grade.clone().expect("graded"),
        ranking,
        submission: dest,
        tie_broken_by_sota,
    })
}

/// Direction-aware "a is at least as good as b" for holdout grades.
pub fn grade_not_worse(a: &GradeResult, b: &GradeResult, task: &TaskSpec) -> bool {
    let ra = task.score(a.score, ScoreSource::Holdout);
    let rb = task.score(b.score, ScoreSource::Holdout);
    !matches!(compare_scores(&ra, &rb), Ok(ScoreOrdering::BBetter))
}
