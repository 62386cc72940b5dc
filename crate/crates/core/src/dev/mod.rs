//! Debug-first coding workflow: draft, debug on sampled data, revise, and
//! only then run at full scale.

pub mod debug_block;
pub mod executor;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use debug_block::{format_debug_block, parse_debug_block, DebugBlockError};
pub use executor::{ExecError, ExecOutput, Executor, ProcessExecutor, RunMode, Workspace};

use crate::model::{Hypothesis, TaskSpec};
use crate::planner::Plan;
use crate::prompts::{self, Vars};
use crate::session::{CallError, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DevConfig {
    pub max_debug_attempts: u32,
    /// Share of the remaining budget a full run's estimate may take.
    pub safety_factor: f64,
}

impl Default for DevConfig {
    fn default() -> Self {
        DevConfig {
            max_debug_attempts: 5,
            safety_factor: 0.8,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DevError {
    #[error("execution cap must be positive, got {0}")]
    InvalidCap(f64),
    #[error("sandbox spawn failure: {0}")]
    SandboxSpawnFailure(String),
}

impl From<ExecError> for DevError {
    fn from(e: ExecError) -> Self {
        DevError::SandboxSpawnFailure(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugReport {
    pub exit_ok: bool,
    pub debug_time_s: Option<f64>,
    pub estimated_time_s: Option<f64>,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub wall_time_s: f64,
    pub timed_out: bool,
    /// Why the run does not count as a successful debug run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit_ok: bool,
    pub wall_time_s: f64,
    pub submission_path: Option<PathBuf>,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub timed_out: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

pub const TIMEOUT_MARKER: &str = "Timeout";
pub const MISSING_SUBMISSION: &str = "MissingSubmission";

pub fn code_digest(code: &str) -> String {
    let digest = Sha256::digest(code.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn run_debug(code: &str, ws: &Workspace, executor: &dyn Executor, cap_s: f64) -> Result<DebugReport, DevError> {
    if !(cap_s > 0.0) {
        return Err(DevError::InvalidCap(cap_s));
    }
    ws.clear_output().map_err(|e| DevError::SandboxSpawnFailure(e.to_string()))?;
    let out = executor.execute(code, ws, RunMode::Debug, cap_s)?;
    let mut report = DebugReport {
        exit_ok: false,
        debug_time_s: None,
        estimated_time_s: None,
        stdout_tail: out.stdout.clone(),
        stderr_tail: out.stderr.clone(),
        wall_time_s: out.wall_time_s,
        timed_out: out.timed_out,
        problem: None,
    };
    if out.timed_out {
        report.problem = Some(format!("{TIMEOUT_MARKER}: debug run exceeded {cap_s:.1}s"));
        return Ok(report);
    }
    if !out.succeeded() {
        report.problem = Some(format!("debug run exited with status {:?}", out.exit_code));
        return Ok(report);
    }
    match parse_debug_block(&out.stdout) {
        Ok((d, e)) if d > 0.0 && e > 0.0 => {
            report.exit_ok = true;
            report.debug_time_s = Some(d);
            report.estimated_time_s = Some(e);
        }
        Ok((d, e)) => report.problem = Some(format!("debug times must be positive, got {d} and {e}")),
        Err(err) => report.problem = Some(err.to_string()),
    }
    Ok(report)
}

pub fn run_full(code: &str, ws: &Workspace, executor: &dyn Executor, cap_s: f64) -> Result<ExecutionResult, DevError> {
    if !(cap_s > 0.0) {
        return Err(DevError::InvalidCap(cap_s));
    }
    ws.clear_output().map_err(|e| DevError::SandboxSpawnFailure(e.to_string()))?;
    let out = executor.execute(code, ws, RunMode::Full, cap_s)?;
    let submission = ws.submission_path();
    let mut result = ExecutionResult {
        exit_ok: false,
        wall_time_s: out.wall_time_s,
        submission_path: None,
        stdout_tail: out.stdout.clone(),
        stderr_tail: out.stderr.clone(),
        timed_out: out.timed_out,
        failure: None,
    };
    if out.timed_out {
        result.failure = Some(format!("{TIMEOUT_MARKER}: full run exceeded {cap_s:.1}s"));
    } else if !out.succeeded() {
        result.failure = Some(format!("full run exited with status {:?}", out.exit_code));
    } else if !submission.is_file() {
        result.failure = Some(format!("{MISSING_SUBMISSION}: {} was not written", submission.display()));
    } else {
        result.exit_ok = true;
        result.submission_path = Some(submission);
    }
    Ok(result)
}

/// Inputs for a merge draft, already rendered as prompt text.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeInputs {
    pub main_solution: String,
    pub sources: Vec<String>,
}

pub struct DraftRequest<'a> {
    pub hypothesis: &'a Hypothesis,
    pub parent_code: Option<&'a str>,
    pub task: &'a TaskSpec,
    pub plan: &'a Plan,
    pub merge: Option<&'a MergeInputs>,
}

pub fn constraints_text(plan: &Plan) -> String {
    let mut lines = Vec::new();
    if plan.allow_ensemble && plan.allow_cross_validation {
        lines.push(prompts::ALLOW_HEAVY);
    } else {
        if !plan.allow_ensemble {
            lines.push(prompts::FORBID_ENSEMBLE);
        }
        if !plan.allow_cross_validation {
            lines.push(prompts::FORBID_CROSS_VALIDATION);
        }
    }
    lines.join("\n")
}

pub fn hypothesis_text(h: &Hypothesis) -> String {
    format!(
        "{}\nComponent: {}. Addresses: {}.",
        h.text,
        h.component_tag.as_str(),
        h.problem_ref
    )
}

/// Body of the first fenced block, or the trimmed text when there is none.
pub fn extract_code(text: &str) -> String {
    let mut lines = text.lines();
    let mut body = Vec::new();
    let mut inside = false;
    for line in lines.by_ref() {
        if line.trim_start().starts_with("```") {
            if inside {
                return body.join("\n") + "\n";
            }
            inside = true;
        } else if inside {
            body.push(line);
        }
    }
    if inside {
        body.join("\n") + "\n"
    } else {
        text.trim().to_string() + "\n"
    }
}

fn revision_section(revision: Option<(&str, &str)>) -> String {
    match revision {
        None => "None.".into(),
        Some((code, feedback)) => format!(
            "The previous attempt failed. Fix it without changing the approach.\n\n```\n{}```\n\nFeedback:\n{}",
            code, feedback
        ),
    }
}

/// Asks the backend for a complete solution implementing the hypothesis.
pub fn draft_solution(
    req: &DraftRequest<'_>,
    revision: Option<(&str, &str)>,
    session: &Session<'_>,
) -> Result<String, CallError> {
    let mut vars = Vars::new();
    vars.insert("task_summary", req.task.summary());
    vars.insert("hypothesis", hypothesis_text(req.hypothesis));
    vars.insert("constraints", constraints_text(req.plan));
    vars.insert("time_cap", format!("{:.0}", req.plan.per_execution_cap_s));
    vars.insert("revision_section", revision_section(revision));
    let step = match req.merge {
        Some(m) => {
            vars.insert("stage_guidance", prompts::MERGE_STAGE_GUIDANCE.into());
            vars.insert("main_solution", m.main_solution.clone());
            vars.insert("merge_sources", m.sources.join("\n\n"));
            prompts::MERGE
        }
        None => {
            vars.insert("metric", req.task.metric_name.clone());
            vars.insert("debug_percent", format!("{:.0}", req.plan.debug_sample_fraction * 100.0));
            vars.insert(
                "parent_section",
                match req.parent_code {
                    Some(code) => format!("{}\n\n```\n{}```", prompts::EDIT_PARENT, code),
                    None => "None: write a new solution from scratch.".into(),
                },
            );
            prompts::DRAFT
        }
    };
    let resp = session.call(step, &vars)?;
    Ok(extract_code(&resp.text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugAttempt {
    pub attempt: u32,
    pub code_digest: String,
    pub report: DebugReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingOutcome {
    /// Last drafted code, if any draft succeeded.
    pub code: Option<String>,
    pub attempts: Vec<DebugAttempt>,
    /// Digest of the code that went to the full run.
    pub full_code_digest: Option<String>,
    pub full: Option<ExecutionResult>,
    pub feedback: String,
    pub sandbox_time_s: f64,
}

impl CodingOutcome {
    pub fn succeeded(&self) -> bool {
        self.full.as_ref().is_some_and(|f| f.exit_ok)
    }
}

pub const EXCEEDS_CAP: &str = "estimated runtime exceeds cap";

fn failure_feedback(report: &DebugReport) -> String {
    let mut s = report.problem.clone().unwrap_or_else(|| "debug run failed".into());
    let stderr = report.stderr_tail.trim();
    if !stderr.is_empty() {
        let tail: Vec<&str> = stderr.lines().rev().take(20).collect();
        s.push_str("\nstderr:\n");
        s.push_str(&tail.into_iter().rev().collect::<Vec<_>>().join("\n"));
    }
    s
}

/// Draft, debug and revise up to `max_debug_attempts` times; run at full
/// scale only after a successful debug run whose estimate fits both the
/// per-execution cap and `safety_factor` of the remaining budget.
pub fn coding_loop(
    req: &DraftRequest<'_>,
    session: &Session<'_>,
    executor: &dyn Executor,
    ws: &Workspace,
    cfg: &DevConfig,
    remaining_budget_s: f64,
) -> CodingOutcome {
    let cap = req.plan.per_execution_cap_s;
    let mut outcome = CodingOutcome {
        code: None,
        attempts: Vec::new(),
        full_code_digest: None,
        full: None,
        feedback: String::new(),
        sandbox_time_s: 0.0,
    };
    let mut notes: Vec<String> = Vec::new();
    let mut revision: Option<(String, String)> = None;

    for attempt in 1..=cfg.max_debug_attempts.max(1) {
        let code = match draft_solution(req, revision.as_ref().map(|(c, f)| (c.as_str(), f.as_str())), session) {
            Ok(code) => code,
            Err(e) => {
                notes.push(format!("attempt {attempt}: drafting failed: {e}"));
                break;
            }
        };
        outcome.code = Some(code.clone());
        let report = match run_debug(&code, ws, executor, cap) {
            Ok(r) => r,
            Err(e) => {
                notes.push(format!("attempt {attempt}: {e}"));
                break;
            }
        };
        outcome.sandbox_time_s += report.wall_time_s;
        outcome.attempts.push(DebugAttempt {
            attempt,
            code_digest: code_digest(&code),
            report: report.clone(),
        });
        if !report.exit_ok {
            let fb = failure_feedback(&report);
            notes.push(format!("attempt {attempt}: {fb}"));
            revision = Some((code, fb));
            continue;
        }

        let estimate = report.estimated_time_s.unwrap_or(f64::INFINITY);
        let budget_left = remaining_budget_s - outcome.sandbox_time_s;
        if estimate > cap || estimate > cfg.safety_factor * budget_left {
            notes.push(format!(
                "{EXCEEDS_CAP}: estimated {estimate:.1}s, cap {cap:.1}s, {:.1}s of budget left",
                budget_left.max(0.0)
            ));
            break;
        }

        match run_full(&code, ws, executor, cap) {
            Ok(full) => {
                outcome.sandbox_time_s += full.wall_time_s;
                match &full.failure {
                    Some(f) => notes.push(format!("full run failed: {f}")),
                    None => notes.push(format!("full run finished in {:.1}s", full.wall_time_s)),
                }
                outcome.full_code_digest = Some(code_digest(&code));
                outcome.full = Some(full);
            }
            Err(e) => notes.push(format!("full run: {e}")),
        }
        break;
    }
    if outcome.full.is_none() && outcome.attempts.len() as u32 >= cfg.max_debug_attempts && revision.is_some() {
        notes.push(format!("gave up after {} debug attempts", cfg.max_debug_attempts));
    }
    outcome.feedback = notes.join("\n");
    outcome
}
