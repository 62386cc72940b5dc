#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rdloop_core::backends::synthetic::{write_synthetic_task, Directive};
use rdloop_core::backends::{
    BackendError, PromptBackend, PromptRequest, PromptResponse, SyntheticConfig, SyntheticWorld, Usage,
};
use rdloop_core::model::{
    BranchId, CodeArtifact, Hypothesis, Node, NodeId, NodeStatus, ScoreRecord, ScoreSource, TaskSpec,
};
use rdloop_core::planner::{Plan, Stage};
use rdloop_core::orchestrator::{run, RunConfig, RunOptions, RunOutcome};

pub fn synthetic_task(dir: &Path, seed: u64) {
    write_synthetic_task(dir, 400, seed).expect("task written");
}

/// Offline configuration on the synthetic world: simulated clock, no real sleeping.
pub fn offline_config(budget_s: f64, branches: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.budget_s = budget_s;
    cfg.run.branch_count = branches;
    cfg.run.worker_count = branches;
    cfg.run.seed = seed;
    cfg.planner.draft_roots = branches;
    cfg.synthetic = SyntheticConfig {
        landscape_seed: seed,
        ..SyntheticConfig::default()
    };
    cfg
}

pub fn run_offline(task: &Path, run_dir: &Path, cfg: &RunConfig) -> RunOutcome {
    let opts = RunOptions {
        offline: true,
        run_dir: Some(run_dir.to_path_buf()),
        ..RunOptions::default()
    };
    run(task, cfg, &opts).expect("run completes")
}

/// Highest true landscape value among the executed nodes of a run.
pub fn best_true_value(out: &RunOutcome, cfg: &RunConfig) -> f64 {
    let world = SyntheticWorld::new(cfg.synthetic.clone());
    out.graph
        .executed_nodes()
        .filter_map(|n| Directive::parse(&n.code.text))
        .map(|d| world.value(&d.params))
        .fold(0.0, f64::max)
}

/// Backend double: answers from per-step queues and keeps every prompt it saw.
#[derive(Default)]
pub struct Capture {
    replies: Mutex<BTreeMap<String, VecDeque<String>>>,
    pub prompts: Mutex<Vec<(String, String)>>,
}

impl Capture {
    pub fn new(replies: &[(&str, &str)]) -> Self {
        let c = Capture::default();
        for (step, text) in replies {
            c.replies
                .lock()
                .unwrap()
                .entry(step.to_string())
                .or_default()
                .push_back(text.to_string());
        }
        c
    }

    pub fn prompts_for(&self, step: &str) -> Vec<String> {
        self.prompts
            .lock()
            .unwrap()
            .iter()
            .filter(|(s, _)| s == step)
            .map(|(_, p)| p.clone())
            .collect()
    }
}

impl PromptBackend for Capture {
    fn id(&self) -> &str {
        "capture"
    }

    fn complete(&self, req: &PromptRequest) -> Result<PromptResponse, BackendError> {
        self.prompts
            .lock()
            .unwrap()
            .push((req.step_name.clone(), req.rendered_prompt.clone()));
        let text = self
            .replies
            .lock()
            .unwrap()
            .get_mut(&req.step_name)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| BackendError::FixtureExhausted {
                step: req.step_name.clone(),
                stream: req.stream.clone(),
                index: 0,
            })?;
        Ok(PromptResponse {
            text,
            usage: Usage::default(),
            latency_ms: 1.0,
            backend_id: "capture".into(),
        })
    }
}

pub fn task_spec() -> TaskSpec {
    TaskSpec {
        task_type: "Classification".into(),
        data_type: "Tabular".into(),
        brief_description: "Predict the label.".into(),
        metric_name: "accuracy".into(),
        higher_is_better: true,
        longer_time_limit: false,
        workspace_root: PathBuf::new(),
        entrypoint_command: vec!["sh".into(), "main.sh".into()],
    }
}

pub fn plan(stage: Stage, cap_s: f64) -> Plan {
    let heavy = stage != Stage::Draft;
    Plan {
        stage,
        allow_ensemble: heavy,
        allow_cross_validation: heavy,
        novelty_bias: 0.5,
        per_execution_cap_s: cap_s,
        debug_sample_fraction: 0.1,
        target_branch: None,
        remaining_s: 1000.0,
    }
}

/// Node carrying `code`; executed with the validation score when given, failed otherwise.
pub fn node(id: u64, branch: u32, parents: &[u64], validation: Option<f64>, code: &str) -> Node {
    Node {
        id: NodeId(id),
        parent_ids: parents.iter().map(|p| NodeId(*p)).collect(),
        branch_id: BranchId(branch),
        loop_index: id,
        hypothesis: Hypothesis::placeholder("fixture"),
        code: CodeArtifact {
            text: code.into(),
            workspace: PathBuf::new(),
        },
        score: validation.map(|v| ScoreRecord {
            value: v,
            metric_name: "accuracy".into(),
            higher_is_better: true,
            source: ScoreSource::Validation,
        }),
        holdout: None,
        feedback: String::new(),
        status: if validation.is_some() {
            NodeStatus::Executed
        } else {
            NodeStatus::Failed
        },
        wall_time_s: 1.0,
        submission: None,
    }
}
