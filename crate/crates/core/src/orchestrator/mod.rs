//! Coordinator: rounds of parallel loops over a shared exploration graph,
//! the trace, pruning, resume and the final submission.

pub mod clock;
pub mod config;
pub mod prune;
pub mod report;
pub mod run;
pub mod schedule;
pub mod trace;
pub mod worker;

use std::path::Path;

use thiserror::Error;

pub use clock::RunClock;
pub use config::{BackendKind, ClockMode, EmbedderKind, RunConfig};
pub use prune::{prune_branches, relative_gap, PruneRule};
pub use report::{build_report, RunReport};
pub use run::{resume, run, validate_task, RunManifest, RunOptions, RunOutcome, REPORT_FILE, RUN_FILE, TRACE_FILE};
pub use schedule::{plan_round, select_parents, Assignment, LoopKind, RoundShape};
pub use trace::{read_trace, repair_trace, replay, EventKind, Replay, TraceEvent, TraceWriter};

use crate::backends::BackendError;
use crate::eval::EvalError;
use crate::model::{BranchId, ModelError};
use crate::planner::PlanError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid task: {0}")]
    Task(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("trace is corrupt at line {line} (last committed loop {last_valid_loop:?})")]
    CorruptTrace { line: usize, last_valid_loop: Option<u64> },
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("no viable parent on branch {0}")]
    NoViableParent(BranchId),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

impl OrchestratorError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        OrchestratorError::Io(format!("{}: {e}", path.display()))
    }
}
