//! One R&D loop: reasoning, memory pool, coding workflow and evaluation,
//! run against a read-only snapshot of the graph.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::config::RunConfig;
use super::schedule::{Assignment, LoopKind};
use super::trace::EventKind;
use crate::backends::embed::fnv1a64;
use crate::backends::{Embedder, PromptBackend};
use crate::dev::{coding_loop, CodingOutcome, DraftRequest, Executor, MergeInputs, Workspace};
use crate::eval::{parse_grade_output, validate_submission, SplitManifest};
use crate::memory::{build_candidate_pool, CandidatePool};
use crate::model::{
    branch_best, compare_scores, global_best, BranchId, CodeArtifact, ExplorationGraph, Hypothesis, Node, NodeId, NodeStatus,
    ScoreOrdering, ScoreRecord, ScoreSource, TaskSpec,
};
use crate::planner::Plan;
use crate::prompts::PromptLibrary;
use crate::reasoning::{
    generate_hypotheses, identify_problems, offline_select, select_hypothesis, summarize_feedback, GenerationInput,
    SelectionOutcome, SotaComparison,
};
use crate::session::{CallRecord, Session};

/// Shared, read-only resources of a run.
pub struct LoopEnv<'a> {
    pub cfg: &'a RunConfig,
    pub task: &'a TaskSpec,
    pub description: &'a str,
    pub manifest: &'a SplitManifest,
    pub backend: &'a dyn PromptBackend,
    pub embedder: &'a dyn Embedder,
    pub executor: &'a dyn Executor,
    pub prompts: &'a PromptLibrary,
    pub run_dir: &'a Path,
}

pub struct LoopInput {
    pub assignment: Assignment,
    pub plan: Plan,
    pub node_id: NodeId,
    /// Run time when the round started.
    pub elapsed_s: f64,
}

pub struct LoopOutput {
    pub node: Node,
    pub events: Vec<(EventKind, Value)>,
    pub calls: Vec<CallRecord>,
    /// Sandbox time plus the simulated cost of every backend call.
    pub charged_s: f64,
}

pub fn loop_seed(run_seed: u64, branch: u32, loop_index: u64) -> u64 {
    fnv1a64(format!("{run_seed}/{branch}/{loop_index}").as_bytes())
}

pub fn node_summary(n: &Node) -> String {
    let score = n
        .score
        .as_ref()
        .map_or("failed".to_string(), |s| format!("validation {} {:.4}", s.metric_name, s.value));
    let mut s = format!("n{} (b{}) {score}\nHypothesis: {}", n.id.0, n.branch_id.0, n.hypothesis.text);
    if !n.feedback.is_empty() {
        let fb: String = n.feedback.chars().take(600).collect();
        s.push_str(&format!("\nFeedback: {}", fb.replace('\n', " ")));
    }
    s
}

const NO_PARENT: &str = "None: this loop starts a new branch.";

fn history(graph: &ExplorationGraph, input: &LoopInput) -> String {
    let mut lines: Vec<String> = Vec::new();
    if let Some(g) = global_best(graph) {
        lines.push(format!("Global best: {}", node_summary(g).replace('\n', " | ")));
    }
    let recent: Vec<&Node> = graph.branch_nodes(input.assignment.branch).collect();
    for n in recent.iter().rev().take(3).rev() {
        lines.push(format!("Recent on this branch: {}", node_summary(n).replace('\n', " | ")));
    }
    if lines.is_empty() {
        "No experiments yet.".into()
    } else {
        lines.join("\n")
    }
}

fn sota_for(graph: &ExplorationGraph, branch: BranchId) -> SotaComparison {
    SotaComparison {
        branch_best: branch_best(graph, branch).ok().flatten().and_then(|n| n.score.clone()),
        global_best: global_best(graph).and_then(|n| n.score.clone()),
    }
}

fn embed(env: &LoopEnv<'_>, h: &mut Hypothesis) {
    if h.embedding.is_some() {
        return;
    }
    match env.embedder.embed(&h.text) {
        Ok(v) => h.embedding = Some(v),
        Err(e) => tracing::warn!(error = %e, "hypothesis left without embedding"),
    }
}

fn read_validation_score(ws: &Workspace, env: &LoopEnv<'_>) -> Result<ScoreRecord, String> {
    let path = ws.output_dir.join("scores.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{} unreadable: {e}", path.display()))?;
    let grade = parse_grade_output(&text, &env.task.metric_name).map_err(|e| e.to_string())?;
    let violations = validate_submission(&ws.submission_path(), &env.manifest.sample_submission_path());
    if !violations.is_empty() {
        return Err(format!("submission rejected: {}", violations.join("; ")));
    }
    Ok(env.task.score(grade.score, ScoreSource::Validation))
}


fn reason(
    env: &LoopEnv<'_>,
    graph: &ExplorationGraph,
    input: &LoopInput,
    session: &Session<'_>,
    events: &mut Vec<(EventKind, Value)>,
) -> Result<SelectionOutcome, String> {
    let a = &input.assignment;
    let parents: Vec<&Node> = a.parents.iter().filter_map(|p| graph.node(*p)).collect();
    let parent_summary = match a.kind {
        LoopKind::Root => NO_PARENT.to_string(),
        LoopKind::Improve => parents.first().map_or(NO_PARENT.to_string(), |p| node_summary(p)),
        LoopKind::Merge => {
            let mut s = parents.first().map_or(NO_PARENT.to_string(), |p| node_summary(p));
            let others: Vec<String> = parents.iter().skip(1).map(|p| format!("n{}", p.id.0)).collect();
            if !others.is_empty() {
                s.push_str(&format!("\nTo be merged with: {}", others.join(", ")));
            }
            s
        }
    };
    let context = match a.kind {
        LoopKind::Root => format!("{}\n\nNo experiments exist on this branch yet.", env.description.trim()),
        _ => {
            let mut c = parent_summary.clone();
            for p in parents.iter().skip(1) {
                c.push_str("\n\n");
                c.push_str(&node_summary(p));
            }
            c.push_str("\n\n");
            c.push_str(&history(graph, input));
            c
        }
    };
    let rcfg = &env.cfg.reasoning;
    let problems = identify_problems(&context, env.task, session, rcfg).map_err(|e| format!("identify: {e}"))?;
    let pool_context = history(graph, input);
    let mut hypotheses = generate_hypotheses(
        &GenerationInput {
            problems: &problems,
            plan: &input.plan,
            parent_summary: &parent_summary,
            pool_context: &pool_context,
        },
        env.task,
        session,
        rcfg,
    )
    .map_err(|e| format!("generate: {e}"))?;
    for h in &mut hypotheses {
        embed(env, h);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(loop_seed(env.cfg.run.seed, a.branch.0, input.node_id.0));
    let share = env.cfg.kernel.enabled && a.kind != LoopKind::Root;
    let (pool, pool_event) = if share {
        let (pool, sample) = build_candidate_pool(hypotheses, graph, a.branch, &env.cfg.kernel.params, &mut rng)
            .map_err(|e| format!("pool: {e}"))?;
        let event = json!({
            "skipped": false,
            "kernel_enabled": true,
            "no_eligible_history": sample.no_eligible_history,
            "considered": sample.considered,
        });
        (pool, event)
    } else {
        let current = hypotheses
            .into_iter()
            .take(env.cfg.kernel.params.current_count_m)
            .collect();
        let event = json!({
            "skipped": a.kind == LoopKind::Root,
            "kernel_enabled": env.cfg.kernel.enabled,
        });
        (CandidatePool::current_only(current), event)
    };
    let mut pool_event = pool_event;
    pool_event["problems"] = serde_json::to_value(&problems).expect("serializes");
    pool_event["candidates"] = pool_listing(&pool);
    events.push((EventKind::Pool, pool_event));

    let sota = sota_for(graph, a.branch);
    let mut selection = if rcfg.offline_selector {
        offline_select(&pool, &rcfg.dimension_weights)
    } else {
        select_hypothesis(&pool, &input.plan, &sota, &parent_summary, env.task, session)
    }
    .map_err(|e| format!("select: {e}"))?;
    embed(env, &mut selection.hypothesis);
    events.push((
        EventKind::Selection,
        json!({
            "action": selection.action,
            "hypothesis": selection.hypothesis.text,
            "origin": selection.hypothesis.origin,
            "component": selection.hypothesis.component_tag,
            "source_refs": selection.source_refs,
            "downgraded": selection.downgraded,
        }),
    ));
    Ok(selection)
}

fn pool_listing(pool: &CandidatePool) -> Value {
    Value::Array(
        pool.iter()
            .map(|h| json!({"text": h.text, "origin": h.origin}))
            .collect(),
    )
}

fn merge_inputs(graph: &ExplorationGraph, parents: &[NodeId]) -> Option<MergeInputs> {
    let nodes: Vec<&Node> = parents.iter().filter_map(|p| graph.node(*p)).collect();
    let (main, rest) = nodes.split_first()?;
    let render = |n: &Node| format!("{}\n\n```\n{}```", node_summary(n), n.code.text);
    Some(MergeInputs {
        main_solution: render(main),
        sources: rest.iter().map(|n| render(n)).collect(),
    })
}

fn coding_events(outcome: &CodingOutcome, events: &mut Vec<(EventKind, Value)>) {
    events.push((
        EventKind::Draft,
        json!({
            "attempts": outcome.attempts.iter().map(|a| json!({"attempt": a.attempt, "code_digest": a.code_digest})).collect::<Vec<_>>(),
        }),
    ));
    for a in &outcome.attempts {
        events.push((EventKind::Debug, serde_json::to_value(a).expect("serializes")));
    }
    if let Some(full) = &outcome.full {
        events.push((
            EventKind::FullRun,
            json!({"code_digest": outcome.full_code_digest, "result": full}),
        ));
    }
}

fn improved(score: &Option<ScoreRecord>, parent: Option<&ScoreRecord>) -> &'static str {
    match (score, parent) {
        (Some(s), Some(p)) => match compare_scores(s, p) {
            Ok(ScoreOrdering::ABetter) => "yes",
            _ => "no",
        },
        (Some(_), None) => "n/a (no scored parent)",
        (None, _) => "no",
    }
}

/// Runs one loop end to end. Every failure is recorded on the returned
/// node rather than propagated.
pub fn run_loop(env: &LoopEnv<'_>, graph: &ExplorationGraph, input: &LoopInput) -> LoopOutput {
    let a = &input.assignment;
    let cfg = env.cfg;
    let key_prefix = format!("s{}-n{}", cfg.run.seed, input.node_id.0);
    let session = Session::new(
        env.backend,
        env.prompts,
        &cfg.backend.calls,
        key_prefix,
        format!("b{}", a.branch.0),
    );
    let mut events: Vec<(EventKind, Value)> = vec![
        (
            EventKind::LoopStart,
            json!({"branch": a.branch, "kind": a.kind, "parents": a.parents, "elapsed_s": input.elapsed_s}),
        ),
        (EventKind::Plan, serde_json::to_value(&input.plan).expect("serializes")),
    ];
    let mut node = Node {
        id: input.node_id,
        parent_ids: a.parents.clone(),
        branch_id: a.branch,
        loop_index: input.node_id.0,
        hypothesis: Hypothesis::placeholder("loop did not reach selection"),
        code: CodeArtifact {
            text: String::new(),
            workspace: env.run_dir.join("nodes").join(format!("n{}", input.node_id.0)),
        },
        score: None,
        holdout: None,
        feedback: String::new(),
        status: NodeStatus::Failed,
        wall_time_s: 0.0,
        submission: None,
    };

    let mut sandbox_s = 0.0;
    match reason(env, graph, input, &session, &mut events) {
        Err(reason) => {
            node.hypothesis = Hypothesis::placeholder(&reason);
            node.feedback = format!("Reasoning failed: {reason}");
        }
        Ok(selection) => {
            node.hypothesis = selection.hypothesis;
            node.status = NodeStatus::Drafting;
            let parent_code = match a.kind {
                LoopKind::Improve => a.parents.first().and_then(|p| graph.node(*p)).map(|n| n.code.text.as_str()),
                _ => None,
            };
            let merge = match a.kind {
                LoopKind::Merge => merge_inputs(graph, &a.parents),
                _ => None,
            };
            if let Some(m) = &merge {
                events.push((
                    EventKind::Merge,
                    json!({"parents": a.parents, "sources": m.sources.len() + 1}),
                ));
            }
            let outcome = match Workspace::create(&node.code.workspace, &env.manifest.input_dir) {
                Ok(ws) => {
                    let req = DraftRequest {
                        hypothesis: &node.hypothesis,
                        parent_code,
                        task: env.task,
                        plan: &input.plan,
                        merge: merge.as_ref(),
                    };
                    let outcome = coding_loop(&req, &session, env.executor, &ws, &cfg.dev, input.plan.remaining_s);
                    Some((ws, outcome))
                }
                Err(e) => {
                    node.feedback = format!("workspace: {e}");
                    None
                }
            };
            if let Some((ws, outcome)) = outcome {
                coding_events(&outcome, &mut events);
                sandbox_s = outcome.sandbox_time_s;
                node.code.text = outcome.code.clone().unwrap_or_default();
                if !outcome.attempts.is_empty() && outcome.attempts.iter().any(|a| a.report.exit_ok) {
                    node.status = NodeStatus::Debugged;
                }
                let mut notes = outcome.feedback.clone();
                if outcome.succeeded() {
                    match read_validation_score(&ws, env) {
                        Ok(score) => {
                            node.score = Some(score);
                            node.status = NodeStatus::Executed;
                            node.submission = Some(ws.submission_path());
                        }
                        Err(why) => notes.push_str(&format!("\n{why}")),
                    }
                }
                if node.status != NodeStatus::Executed {
                    node.status = NodeStatus::Failed;
                }
                events.push((
                    EventKind::Grade,
                    json!({"score": node.score, "notes": notes}),
                ));

                let parent_score = a
                    .parents
                    .first()
                    .and_then(|p| graph.node(*p))
                    .and_then(|n| n.score.as_ref());
                let headline = match &node.score {
                    Some(s) => format!(
                        "Validation {} {:.4}{}.",
                        s.metric_name,
                        s.value,
                        parent_score.map_or(String::new(), |p| format!(" (parent {:.4})", p.value))
                    ),
                    None => "The experiment did not produce a valid scored submission.".into(),
                };
                let outcome_text = format!(
                    "{headline} Improved on parent: {}\n{}",
                    improved(&node.score, parent_score),
                    notes.trim()
                );
                let sota = sota_for(graph, a.branch);
                node.feedback = match summarize_feedback(&node.hypothesis, &outcome_text, &sota, env.task, &session) {
                    Ok(f) => f.render(),
                    Err(e) => {
                        tracing::warn!(error = %e, node = node.id.0, "feedback step failed");
                        outcome_text
                    }
                };
            }
        }
    }

    let calls = session.take_records();
    let call_s = calls.iter().filter(|c| c.error.is_none()).count() as f64 * cfg.run.simulated_call_s;
    // model latency is logged per call, not on the node
    node.wall_time_s = sandbox_s;
    LoopOutput {
        node,
        events,
        calls,
        charged_s: sandbox_s + call_s,
    }
}
