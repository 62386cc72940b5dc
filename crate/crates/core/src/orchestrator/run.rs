//! Fresh runs and resumed runs share one driver: plan a round, run its loops
//! in parallel against a snapshot, commit in dispatch order, repeat until the
//! budget is spent, then pick the final submission.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::clock::RunClock;
use super::config::{BackendKind, ClockMode, EmbedderKind, RunConfig};
use super::prune::{prune_branches, PruneRule};
use super::report::build_report;
use super::schedule::{plan_round, RoundShape};
use super::trace::{prefix_len, read_trace, repair_trace, replay, CommitPayload, EventKind, RoundInfo, TraceWriter};
use super::worker::{run_loop, LoopEnv, LoopInput, LoopOutput};
use super::OrchestratorError;
use crate::backends::{
    Embedder, HashedEmbedder, OpenAiBackend, OpenAiEmbedder, PromptBackend, RecordingBackend, ScriptedBackend,
    SyntheticBackend, SyntheticExecutor, SyntheticWorld,
};
use crate::dev::{Executor, ProcessExecutor};
use crate::eval::{
    final_submit, prepare_splits, AccuracyGrader, CommandGrader, EvalError, FinalSelection, Grader, GraderSpec,
    Revalidation, SplitManifest, TaskMeta,
};
use crate::model::{parse_task_analysis, ExplorationGraph, NodeId, TaskSpec};
use crate::planner::{make_plan, PlanError};
use crate::prompts::{self, PromptLibrary, Vars};
use crate::session::{CallRecord, Session};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const RUN_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "run.toml";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Use the scripted backend when fixtures are configured, the synthetic one otherwise.
    pub offline: bool,
    /// Truncate a torn trailing line instead of failing on resume.
    pub repair: bool,
    /// Stop right after this many commits, as if the process had died.
    pub halt_after_commits: Option<u64>,
    /// Run directory; defaults to `<runs_dir>/run-<seed>-<unix time>`.
    pub run_dir: Option<PathBuf>,
    /// Budget already consumed before the first loop.
    pub elapsed_offset_s: f64,
}

/// Fixed facts of a run, written once so a resume needs only the trace path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub task_dir: PathBuf,
    pub description: String,
    pub task: TaskSpec,
    pub meta: TaskMeta,
    pub split: SplitManifest,
    pub created_at: u64,
    pub offline: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub trace_path: PathBuf,
    pub graph: ExplorationGraph,
    pub final_selection: Option<FinalSelection>,
    /// Set when the run stopped early because of `halt_after_commits`.
    pub halted: bool,
    pub elapsed_s: f64,
    pub rounds: u64,
}

struct Services {
    backend: Box<dyn PromptBackend>,
    embedder: Box<dyn Embedder>,
    executor: Box<dyn Executor>,
    prompts: PromptLibrary,
}

fn build_services(cfg: &RunConfig, synthetic_task: bool, offline: bool) -> Result<Services, OrchestratorError> {
    let world: Arc<SyntheticWorld> = SyntheticWorld::new(cfg.synthetic.clone());
    let kind = match (offline, &cfg.backend.scripted_dir) {
        (true, Some(_)) => BackendKind::Scripted,
        (true, None) => BackendKind::Synthetic,
        (false, _) => cfg.backend.kind,
    };
    let backend: Box<dyn PromptBackend> = match kind {
        BackendKind::OpenAi => Box::new(OpenAiBackend::from_env(cfg.backend.openai.clone())?),
        BackendKind::Synthetic => Box::new(SyntheticBackend::new(world.clone())),
        BackendKind::Scripted => {
            let dir = cfg
                .backend
                .scripted_dir
                .as_ref()
                .ok_or_else(|| OrchestratorError::Config("backend.scripted_dir is required for the scripted backend".into()))?;
            Box::new(ScriptedBackend::from_dir(dir)?)
        }
    };
    let backend: Box<dyn PromptBackend> = match &cfg.backend.record_dir {
        Some(dir) => Box::new(RecordingBackend::new(backend, dir.clone())),
        None => backend,
    };
    let embedder: Box<dyn Embedder> = match (cfg.backend.embedder, offline) {
        (EmbedderKind::OpenAi, false) => Box::new(OpenAiEmbedder::from_env(
            cfg.backend.openai.clone(),
            cfg.backend.embedding_dim,
        )?),
        _ => Box::new(HashedEmbedder::new(cfg.backend.embedding_dim)),
    };
    let executor: Box<dyn Executor> = if synthetic_task {
        Box::new(SyntheticExecutor::new(world))
    } else {
        Box::new(ProcessExecutor {
            command: cfg.executor.command.clone(),
            entrypoint: cfg.executor.entrypoint.clone(),
            env_whitelist: cfg.executor.env_whitelist.clone(),
            ..ProcessExecutor::default()
        })
    };
    let prompts = PromptLibrary::with_overrides(cfg.prompts.dir.as_deref())
        .map_err(|e| OrchestratorError::Config(format!("prompts: {e}")))?;
    Ok(Services {
        backend,
        embedder,
        executor,
        prompts,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), OrchestratorError> {
    let text = serde_json::to_string_pretty(value).expect("serializes");
    fs::write(path, text).map_err(|e| OrchestratorError::io(path, e))
}

fn record_calls(trace: &mut TraceWriter, loop_index: Option<u64>, node: Option<NodeId>, calls: &[CallRecord]) -> Result<(), OrchestratorError> {
    for c in calls {
        trace.append(EventKind::BackendCall, loop_index, node, serde_json::to_value(c).expect("serializes"))?;
    }
    Ok(())
}

/// Asks the backend for the structured task analysis, with one retry on a
/// malformed answer.
fn analyse_task(description: &str, cfg: &RunConfig, services: &Services) -> Result<(TaskSpec, Vec<CallRecord>), OrchestratorError> {
    let session = Session::new(
        services.backend.as_ref(),
        &services.prompts,
        &cfg.backend.calls,
        format!("s{}-task", cfg.run.seed),
        "task",
    );
    let mut vars = Vars::new();
    vars.insert("description", description.to_string());
    let mut last = String::new();
    for _ in 0..2 {
        let resp = session
            .call(prompts::TASK_ANALYSIS, &vars)
            .map_err(|e| OrchestratorError::Task(format!("task analysis call failed: {e}")))?;
        match parse_task_analysis(&resp.text) {
            Ok(spec) => return Ok((spec, session.take_records())),
            Err(e) => last = e.to_string(),
        }
    }
    Err(OrchestratorError::Task(format!("task analysis: {last}")))
}

pub fn read_description(task_dir: &Path) -> Result<String, OrchestratorError> {
    let path = task_dir.join("description.md");
    let text = fs::read_to_string(&path).map_err(|e| OrchestratorError::Task(format!("{}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(OrchestratorError::Task(format!("{} is empty", path.display())));
    }
    Ok(text)
}

/// Checks the task directory layout: a non-empty `description.md`, a
/// parseable `task.json`, and `source/train.csv` holding the id and label
/// columns with at least two rows.
pub fn validate_task(task_dir: &Path) -> Result<TaskMeta, OrchestratorError> {
    read_description(task_dir)?;
    let meta = TaskMeta::load(task_dir).map_err(|e| OrchestratorError::Task(e.to_string()))?;
    let train = task_dir.join("source").join("train.csv");
    let bad = |m: String| OrchestratorError::Task(format!("{}: {m}", train.display()));
    let mut reader = csv::Reader::from_path(&train).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    for col in [&meta.id_column, &meta.label_column] {
        if !headers.iter().any(|h| h == col) {
            return Err(bad(format!("missing column {col:?}")));
        }
    }
    let mut rows = 0usize;
    for rec in reader.records() {
        rec.map_err(|e| bad(e.to_string()))?;
        rows += 1;
    }
    if rows < 2 {
        return Err(bad(format!("needs at least 2 rows, found {rows}")));
    }
    Ok(meta)
}

/// Starts a new run on `task_dir`.
pub fn run(task_dir: &Path, cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome, OrchestratorError> {
    cfg.validate()?;
    let description = read_description(task_dir)?;
    let meta = validate_task(task_dir)?;
    let created_at = super::trace::now_unix() as u64;
    let run_dir = opts.run_dir.clone().unwrap_or_else(|| {
        cfg.paths
            .runs_dir
            .join(format!("run-{}-{created_at}", cfg.run.seed))
    });
    fs::create_dir_all(&run_dir).map_err(|e| OrchestratorError::io(&run_dir, e))?;
    let run_dir = run_dir.canonicalize().map_err(|e| OrchestratorError::io(&run_dir, e))?;
    fs::write(run_dir.join(CONFIG_FILE), cfg.to_toml()).map_err(|e| OrchestratorError::io(&run_dir, e))?;

    let services = build_services(cfg, meta.synthetic, opts.offline)?;
    let trace_path = run_dir.join(TRACE_FILE);
    let mut trace = TraceWriter::create(&trace_path)?;
    let (mut task, calls) = analyse_task(&description, cfg, &services)?;
    record_calls(&mut trace, None, None, &calls)?;
    task.workspace_root = run_dir.clone();
    let mut entry = cfg.executor.command.clone();
    for a in &mut entry {
        *a = a.replace("{entrypoint}", &cfg.executor.entrypoint);
    }
    task.entrypoint_command = entry;

    let split = prepare_splits(task_dir, &run_dir, &meta, &cfg.eval.split, cfg.run.seed)?;
    let manifest = RunManifest {
        task_dir: task_dir.canonicalize().unwrap_or_else(|_| task_dir.to_path_buf()),
        description,
        task,
        meta,
        split,
        created_at,
        offline: opts.offline,
    };
    write_json(&run_dir.join(RUN_FILE), &manifest)?;

    let state = DriveState {
        graph: ExplorationGraph::new(created_at),
        clock: start_clock(cfg, &manifest, opts.elapsed_offset_s.max(0.0)),
        rounds: 0,
    };
    drive(cfg, &manifest, &services, &run_dir, trace, state, opts)
}

fn start_clock(cfg: &RunConfig, manifest: &RunManifest, elapsed_s: f64) -> RunClock {
    let simulated = match cfg.run.clock {
        ClockMode::Simulated => true,
        ClockMode::Wall => false,
        ClockMode::Auto => manifest.meta.synthetic,
    };
    if simulated {
        RunClock::simulated(elapsed_s)
    } else {
        RunClock::wall(elapsed_s)
    }
}

/// Continues the run that owns `trace_path` from its last complete round.
pub fn resume(trace_path: &Path, opts: &RunOptions) -> Result<RunOutcome, OrchestratorError> {
    let run_dir = trace_path
        .parent()
        .map(Path::to_path_buf)
        .ok_or_else(|| OrchestratorError::InvalidTrace("trace has no parent directory".into()))?;
    let cfg = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    let manifest: RunManifest = {
        let path = run_dir.join(RUN_FILE);
        let text = fs::read_to_string(&path).map_err(|e| OrchestratorError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| OrchestratorError::InvalidTrace(format!("{}: {e}", path.display())))?
    };
    let events = match read_trace(trace_path) {
        Ok(ev) => ev,
        Err(OrchestratorError::CorruptTrace { line, .. }) if opts.repair => {
            let kept = repair_trace(trace_path)?;
            tracing::warn!(line, kept, "dropped torn trace tail");
            read_trace(trace_path)?
        }
        Err(e) => return Err(e),
    };
    let rule = prune_rule(&cfg);
    let state = replay(&events, manifest.created_at, &rule)?;
    let offline = manifest.offline || opts.offline;
    let services = build_services(&cfg, manifest.meta.synthetic, offline)?;

    if let Some(payload) = &state.final_submit {
        let mut graph = state.graph.clone();
        let selection = final_from_payload(payload, &mut graph, &manifest.task)?;
        return Ok(RunOutcome {
            run_dir: run_dir.clone(),
            trace_path: trace_path.to_path_buf(),
            graph,
            final_selection: selection,
            halted: false,
            elapsed_s: state.elapsed_s,
            rounds: state.rounds,
        });
    }

    // drop the incomplete round so it is re-run from scratch
    let keep = prefix_len(trace_path, state.kept_events.max(leading_task_events(&events)))?;
    OpenOptions::new()
        .write(true)
        .open(trace_path)
        .and_then(|f| f.set_len(keep))
        .map_err(|e| OrchestratorError::io(trace_path, e))?;
    let kept = state.kept_events.max(leading_task_events(&events));
    let mut consumed: BTreeMap<(String, String), usize> = BTreeMap::new();
    for e in events[..kept].iter().filter(|e| e.kind == EventKind::BackendCall) {
        let Ok(rec) = serde_json::from_value::<CallRecord>(e.payload.clone()) else {
            continue;
        };
        if rec.error.is_none() {
            *consumed.entry((rec.step, rec.stream)).or_insert(0) += 1;
        }
    }
    services.backend.restore_progress(&consumed);

    let trace = TraceWriter::append_to(trace_path, kept as u64)?;
    let drive_state = DriveState {
        graph: state.graph,
        clock: start_clock(&cfg, &manifest, state.elapsed_s),
        rounds: state.rounds,
    };
    drive(&cfg, &manifest, &services, &run_dir, trace, drive_state, opts)
}

/// Task-analysis calls written before the first loop.
fn leading_task_events(events: &[super::trace::TraceEvent]) -> usize {
    events
        .iter()
        .take_while(|e| e.kind == EventKind::BackendCall && e.loop_index.is_none())
        .count()
}

fn final_from_payload(
    payload: &Value,
    graph: &mut ExplorationGraph,
    task: &TaskSpec,
) -> Result<Option<FinalSelection>, OrchestratorError> {
    if payload.get("failure").is_some() {
        return Ok(None);
    }
    let sel: FinalSelection = serde_json::from_value(payload.clone())
        .map_err(|e| OrchestratorError::InvalidTrace(format!("final_submit payload: {e}")))?;
    for r in &sel.ranking {
        if let (Some(rec), Some(node)) = (r.holdout_record(task), graph.nodes.get_mut(&r.node_id)) {
            node.holdout = Some(rec);
        }
    }
    Ok(Some(sel))
}

fn prune_rule(cfg: &RunConfig) -> PruneRule {
    PruneRule {
        enabled: cfg.prune.enabled,
        margin: cfg.prune.margin,
        patience: cfg.prune.patience,
        regular_branches: cfg.run.branch_count as u32,
    }
}

struct DriveState {
    graph: ExplorationGraph,
    clock: RunClock,
    rounds: u64,
}

fn drive(
    cfg: &RunConfig,
    manifest: &RunManifest,
    services: &Services,
    run_dir: &Path,
    mut trace: TraceWriter,
    mut state: DriveState,
    opts: &RunOptions,
) -> Result<RunOutcome, OrchestratorError> {
    let budget = cfg.run.budget_s;
    let rule = prune_rule(cfg);
    let shape = RoundShape {
        branch_count: cfg.run.branch_count,
        worker_count: cfg.run.worker_count,
        max_merge_attempts: cfg.run.max_merge_attempts,
    };
    let env = LoopEnv {
        cfg,
        task: &manifest.task,
        description: &manifest.description,
        manifest: &manifest.split,
        backend: services.backend.as_ref(),
        embedder: services.embedder.as_ref(),
        executor: services.executor.as_ref(),
        prompts: &services.prompts,
        run_dir,
    };
    let mut commits = 0u64;
    let trace_path = run_dir.join(TRACE_FILE);
    let outcome = |state: DriveState, final_selection, halted| RunOutcome {
        run_dir: run_dir.to_path_buf(),
        trace_path: trace_path.clone(),
        elapsed_s: state.clock.elapsed_s(),
        rounds: state.rounds,
        graph: state.graph,
        final_selection,
        halted,
    };

    loop {
        let elapsed = state.clock.elapsed_s();
        let graph = &state.graph;
        if elapsed >= budget || (cfg.run.max_loops > 0 && graph.loop_counter >= cfg.run.max_loops) {
            break;
        }
        let plan = match make_plan(elapsed, budget, graph, &cfg.planner) {
            Ok(p) => p,
            Err(PlanError::BudgetExhausted { .. }) => break,
            Err(e) => return Err(e.into()),
        };
        let mut assignments = plan_round(graph, &plan, &shape);
        if cfg.run.max_loops > 0 {
            assignments.truncate((cfg.run.max_loops - graph.loop_counter) as usize);
        }
        if assignments.is_empty() {
            tracing::warn!("no runnable loop; ending the search early");
            break;
        }
        let base = graph.next_node_id().0;
        let inputs: Vec<LoopInput> = assignments
            .into_iter()
            .enumerate()
            .map(|(slot, a)| LoopInput {
                plan: plan.with_target(Some(a.branch)),
                assignment: a,
                node_id: NodeId(base + slot as u64),
                elapsed_s: elapsed,
            })
            .collect();
        let outputs: Vec<LoopOutput> = thread::scope(|s| {
            let handles: Vec<_> = inputs
                .iter()
                .map(|input| {
                    let env = &env;
                    s.spawn(move || run_loop(env, graph, input))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("loop thread panicked")).collect()
        });

        let charged = outputs.iter().map(|o| o.charged_s).fold(0.0, f64::max);
        let round_end = if state.clock.is_simulated() {
            elapsed + charged
        } else {
            state.clock.elapsed_s()
        };
        let size = outputs.len();
        for (slot, out) in outputs.into_iter().enumerate() {
            let id = out.node.id;
            let branch = out.node.branch_id;
            for (kind, payload) in out.events {
                trace.append(kind, Some(id.0), Some(id), payload)?;
            }
            record_calls(&mut trace, Some(id.0), Some(id), &out.calls)?;
            let payload = CommitPayload {
                elapsed_s: if state.clock.is_simulated() {
                    elapsed + out.charged_s
                } else {
                    round_end
                },
                node: out.node.clone(),
                round: RoundInfo {
                    index: state.rounds,
                    slot,
                    size,
                },
                round_end_elapsed_s: (slot + 1 == size).then_some(round_end),
            };
            trace.append(
                EventKind::NodeCommitted,
                Some(id.0),
                Some(id),
                serde_json::to_value(&payload).expect("serializes"),
            )?;
            state.graph.commit(out.node)?;
            let pruned = prune_branches(&mut state.graph, &rule, branch);
            if !pruned.is_empty() {
                tracing::info!(?pruned, "branches pruned");
            }
            commits += 1;
            if opts.halt_after_commits.is_some_and(|n| commits >= n) {
                return Ok(outcome(state, None, true));
            }
        }
        state.clock.charge(charged);
        state.rounds += 1;
        tracing::info!(
            round = state.rounds,
            elapsed_s = state.clock.elapsed_s(),
            loops = state.graph.loop_counter,
            "round committed"
        );
    }

    let selection = finish(cfg, manifest, services, run_dir, &mut trace, &mut state.graph)?;
    let events = read_trace(&trace_path)?;
    write_json(&run_dir.join(REPORT_FILE), &build_report(&events))?;
    match selection {
        Some(sel) => Ok(outcome(state, Some(sel), false)),
        None => Err(OrchestratorError::Eval(EvalError::AllCandidatesFailed)),
    }
}

fn finish(
    cfg: &RunConfig,
    manifest: &RunManifest,
    services: &Services,
    run_dir: &Path,
    trace: &mut TraceWriter,
    graph: &mut ExplorationGraph,
) -> Result<Option<FinalSelection>, OrchestratorError> {
    let grader: Box<dyn Grader> = match &manifest.meta.grader {
        GraderSpec::Accuracy => Box::new(AccuracyGrader {
            metric: manifest.task.metric_name.clone(),
        }),
        GraderSpec::Command { command } => Box::new(CommandGrader {
            command: command.clone(),
            metric: manifest.task.metric_name.clone(),
            task_dir: manifest.task_dir.clone(),
            work_root: run_dir.join("grading"),
            timeout_s: cfg.eval.grader_timeout_s,
        }),
    };
    let cap_s = if cfg.eval.final_cap_s > 0.0 {
        cfg.eval.final_cap_s
    } else {
        cfg.planner.execution_cap_s
    };
    let ctx = Revalidation {
        manifest: &manifest.split,
        executor: services.executor.as_ref(),
        grader: grader.as_ref(),
        task: &manifest.task,
        work_dir: run_dir.join("final_runs"),
        cap_s,
    };
    let session = Session::new(
        services.backend.as_ref(),
        &services.prompts,
        &cfg.backend.calls,
        format!("s{}-final", cfg.run.seed),
        "final",
    );
    let result = final_submit(graph, &ctx, cfg.eval.candidate_count, Some(&session), &run_dir.join("final"));
    record_calls(trace, None, None, &session.take_records())?;
    match result {
        Ok(sel) => {
            trace.append(
                EventKind::FinalSubmit,
                None,
                Some(sel.node_id),
                serde_json::to_value(&sel).expect("serializes"),
            )?;
            Ok(Some(sel))
        }
        Err(EvalError::AllCandidatesFailed) => {
            trace.append(EventKind::FinalSubmit, None, None, json!({"failure": "all candidates failed"}))?;
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}
