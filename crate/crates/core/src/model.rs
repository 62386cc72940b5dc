//! Shared data model: task description, scores, hypotheses, nodes and the
//! exploration graph, plus the elementary queries the loop needs over them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("missing field {0:?}")]
    MissingField(String),
    #[error("malformed analysis document: {reason}")]
    MalformedDocument { reason: String, original: String },
    #[error("scores are not comparable: {0}")]
    MetricMismatch(String),
    #[error("unknown branch {0}")]
    UnknownBranch(BranchId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node {node} references unknown parent {parent}")]
    UnknownParent { node: NodeId, parent: NodeId },
    #[error("node {0} is marked executed but has no score")]
    ExecutedWithoutScore(NodeId),
    #[error("graph contains a cycle")]
    Cycle,
    #[error("invalid dimension score {0}, expected 1..=10")]
    DimScoreOutOfRange(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchId(pub u32);

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

/// Structured description of a competition task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_type: String,
    pub data_type: String,
    pub brief_description: String,
    pub metric_name: String,
    pub higher_is_better: bool,
    pub longer_time_limit: bool,
    pub workspace_root: PathBuf,
    pub entrypoint_command: Vec<String>,
}

impl TaskSpec {
    pub fn is_classification(&self) -> bool {
        self.task_type.to_ascii_lowercase().contains("classif")
    }

    /// One-paragraph description used at the top of every prompt.
    pub fn summary(&self) -> String {
        let direction = if self.higher_is_better { "higher" } else { "lower" };
        let mut s = format!(
            "{} task on {} data. Metric: {} ({direction} is better).",
            self.task_type, self.data_type, self.metric_name
        );
        if !self.brief_description.is_empty() {
            s.push(' ');
            s.push_str(&self.brief_description);
        }
        s
    }

    pub fn score(&self, value: f64, source: ScoreSource) -> ScoreRecord {
        ScoreRecord {
            value,
            metric_name: self.metric_name.clone(),
            higher_is_better: self.higher_is_better,
            source,
        }
    }
}

pub const DEFAULT_ENTRYPOINT: [&str; 2] = ["python3", "main.py"];

/// Parses a competition-analysis document (a JSON object keyed by the analysis
/// schema field names). Unknown keys are ignored.
pub fn parse_task_analysis(raw: &str) -> Result<TaskSpec, ModelError> {
    let malformed = |reason: String| ModelError::MalformedDocument {
        reason,
        original: raw.to_string(),
    };
    let doc: Value = serde_json::from_str(raw.trim()).map_err(|e| malformed(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| malformed("top level is not an object".into()))?;

    let text = |key: &str, required: bool| -> Result<String, ModelError> {
        match obj.get(key) {
            None | Some(Value::Null) if required => Err(ModelError::MissingField(key.into())),
            None | Some(Value::Null) => Ok(String::new()),
            Some(Value::String(s)) => Ok(s.trim().to_string()),
            Some(other) => Ok(other.to_string()),
        }
    };
    let flag = |key: &str, required: bool| -> Result<Option<bool>, ModelError> {
        match obj.get(key) {
            None | Some(Value::Null) if required => Err(ModelError::MissingField(key.into())),
            None | Some(Value::Null) => Ok(None),
            Some(Value::Bool(b)) => Ok(Some(*b)),
            Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
                "true" | "yes" => Ok(Some(true)),
                "false" | "no" => Ok(Some(false)),
                _ => Err(malformed(format!("{key:?} is not a boolean: {s:?}"))),
            },
            Some(other) => Err(malformed(format!("{key:?} is not a boolean: {other}"))),
        }
    };

    let metric_name = text("Metric Name", true)?;
    if metric_name.is_empty() {
        return Err(ModelError::MissingField("Metric Name".into()));
    }
    let higher_is_better = flag("Metric Direction", true)?.expect("required flag");

    Ok(TaskSpec {
        task_type: text("Task Type", true)?,
        data_type: text("Data Type", true)?,
        brief_description: text("Brief Description", false)?,
        metric_name,
        higher_is_better,
        longer_time_limit: flag("Longer time limit required", false)?.unwrap_or(false),
        workspace_root: PathBuf::from("."),
        entrypoint_command: DEFAULT_ENTRYPOINT.iter().map(|s| s.to_string()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Validation,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub value: f64,
    pub metric_name: String,
    pub higher_is_better: bool,
    pub source: ScoreSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreOrdering {
    ABetter,
    BBetter,
    Tie,
}

/// Direction-aware comparison of two scores of the same metric.
pub fn compare_scores(a: &ScoreRecord, b: &ScoreRecord) -> Result<ScoreOrdering, ModelError> {
    if a.metric_name != b.metric_name || a.higher_is_better != b.higher_is_better {
        return Err(ModelError::MetricMismatch(format!(
            "{}({}) vs {}({})",
            a.metric_name,
            direction_label(a.higher_is_better),
            b.metric_name,
            direction_label(b.higher_is_better)
        )));
    }
    Ok(if a.value == b.value {
        ScoreOrdering::Tie
    } else if (a.value > b.value) == a.higher_is_better {
        ScoreOrdering::ABetter
    } else {
        ScoreOrdering::BBetter
    })
}

fn direction_label(higher: bool) -> &'static str {
    if higher {
        "higher"
    } else {
        "lower"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ComponentTag {
    DataLoadSpec,
    FeatureEng,
    Model,
    Ensemble,
    Workflow,
}

impl ComponentTag {
    pub const ALL: [ComponentTag; 5] = [
        ComponentTag::DataLoadSpec,
        ComponentTag::FeatureEng,
        ComponentTag::Model,
        ComponentTag::Ensemble,
        ComponentTag::Workflow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentTag::DataLoadSpec => "DataLoadSpec",
            ComponentTag::FeatureEng => "FeatureEng",
            ComponentTag::Model => "Model",
            ComponentTag::Ensemble => "Ensemble",
            ComponentTag::Workflow => "Workflow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().trim_matches('`');
        Self::ALL
            .into_iter()
            .find(|tag| tag.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisOrigin {
    CurrentBranch,
    GlobalBest,
    KernelSampled,
    Created,
    Modified,
}

/// Five 1..=10 scores: alignment, impact, novelty, feasibility, risk/reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimScores(pub [u8; 5]);

impl DimScores {
    pub const NAMES: [&'static str; 5] =
        ["alignment", "impact", "novelty", "feasibility", "risk_reward"];

    pub fn new(scores: [u8; 5]) -> Result<Self, ModelError> {
        match scores.iter().find(|s| !(1..=10).contains(*s)) {
            Some(bad) => Err(ModelError::DimScoreOutOfRange(*bad)),
            None => Ok(DimScores(scores)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    pub component_tag: ComponentTag,
    pub problem_ref: String,
    pub dim_scores: DimScores,
    pub origin: HypothesisOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Hypothesis {
    /// Stand-in recorded on nodes whose loop failed before a hypothesis was chosen.
    pub fn placeholder(reason: &str) -> Self {
        Hypothesis {
            text: format!("(no hypothesis: {reason})"),
            component_tag: ComponentTag::Workflow,
            problem_ref: "none".into(),
            dim_scores: DimScores([1; 5]),
            origin: HypothesisOrigin::Created,
            embedding: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Drafting,
    Debugged,
    Executed,
    Failed,
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub text: String,
    pub workspace: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub parent_ids: Vec<NodeId>,
    pub branch_id: BranchId,
    pub loop_index: u64,
    pub hypothesis: Hypothesis,
    pub code: CodeArtifact,
    pub score: Option<ScoreRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<ScoreRecord>,
    pub feedback: String,
    pub status: NodeStatus,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission: Option<PathBuf>,
}

impl Node {
    pub fn is_executed(&self) -> bool {
        self.status == NodeStatus::Executed && self.score.is_some()
    }
}

/// True when `a` ranks strictly ahead of `b`: present scores beat absent
/// ones, ties go to the lower node id.
pub fn node_ranks_ahead(a: &Node, b: &Node) -> bool {
    match (&a.score, &b.score) {
        (Some(sa), Some(sb)) => match compare_scores(sa, sb) {
            Ok(ScoreOrdering::ABetter) => true,
            Ok(ScoreOrdering::BBetter) => false,
            Ok(ScoreOrdering::Tie) | Err(_) => a.id < b.id,
        },
        (Some(_), None) => true,
        (None, Some(_)) => false,
        (None, None) => a.id < b.id,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationGraph {
    pub nodes: BTreeMap<NodeId, Node>,
    pub branches: BTreeMap<BranchId, Vec<NodeId>>,
    pub loop_counter: u64,
    pub created_at: u64,
    #[serde(default)]
    pub pruned: BTreeSet<BranchId>,
    /// Consecutive loops each branch has trailed the global best by more than the pruning margin.
    #[serde(default)]
    pub trailing: BTreeMap<BranchId, u32>,
}

impl ExplorationGraph {
    pub fn new(created_at: u64) -> Self {
        ExplorationGraph {
            created_at,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn next_node_id(&self) -> NodeId {
        NodeId(self.nodes.keys().next_back().map_or(0, |id| id.0 + 1))
    }

    /// Appends a completed loop's node. Parents must already exist, which
    /// keeps the graph acyclic by construction.
    pub fn commit(&mut self, node: Node) -> Result<(), ModelError> {
        if self.nodes.contains_key(&node.id) {
            return Err(ModelError::DuplicateNode(node.id));
        }
        if let Some(parent) = node.parent_ids.iter().find(|p| !self.nodes.contains_key(p)) {
            return Err(ModelError::UnknownParent {
                node: node.id,
                parent: *parent,
            });
        }
        if node.status == NodeStatus::Executed && node.score.is_none() {
            return Err(ModelError::ExecutedWithoutScore(node.id));
        }
        self.branches.entry(node.branch_id).or_default().push(node.id);
        self.nodes.insert(node.id, node);
        self.loop_counter += 1;
        Ok(())
    }

    pub fn branch_nodes(&self, branch: BranchId) -> impl Iterator<Item = &Node> {
        self.branches
            .get(&branch)
            .into_iter()
            .flatten()
            .filter_map(|id| self.nodes.get(id))
    }

    pub fn branch_ids(&self) -> impl Iterator<Item = BranchId> + '_ {
        self.branches.keys().copied()
    }

    pub fn executed_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(|n| n.is_executed())
    }

    /// Number of ancestors-by-branch: how many loops the branch has run.
    pub fn branch_depth(&self, branch: BranchId) -> usize {
        self.branches.get(&branch).map_or(0, Vec::len)
    }

    pub fn branch_frontier(&self, branch: BranchId) -> Option<&Node> {
        self.branches
            .get(&branch)
            .and_then(|ids| ids.last())
            .and_then(|id| self.nodes.get(id))
    }

    pub fn topological_order(&self) -> Result<Vec<NodeId>, ModelError> {
        let mut indegree: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in self.nodes.values() {
            indegree.entry(node.id).or_insert(0);
            for p in &node.parent_ids {
                if !self.nodes.contains_key(p) {
                    return Err(ModelError::UnknownParent {
                        node: node.id,
                        parent: *p,
                    });
                }
                *indegree.entry(node.id).or_insert(0) += 1;
                children.entry(*p).or_default().push(node.id);
            }
        }
        let mut ready: VecDeque<NodeId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_front() {
            order.push(id);
            for child in children.get(&id).into_iter().flatten() {
                let d = indegree.get_mut(child).expect("child registered");
                *d -= 1;
                if *d == 0 {
                    ready.push_back(*child);
                }
            }
        }
        if order.len() == self.nodes.len() {
            Ok(order)
        } else {
            Err(ModelError::Cycle)
        }
    }
}

fn best_of<'a>(nodes: impl Iterator<Item = &'a Node>) -> Option<&'a Node> {
    nodes
        .filter(|n| n.is_executed())
        .fold(None, |best: Option<&Node>, n| match best {
            Some(b) if !node_ranks_ahead(n, b) => Some(b),
            _ => Some(n),
        })
}

/// Best executed node of one branch.
pub fn branch_best(graph: &ExplorationGraph, branch: BranchId) -> Result<Option<&Node>, ModelError> {
    if !graph.branches.contains_key(&branch) {
        return Err(ModelError::UnknownBranch(branch));
    }
    Ok(best_of(graph.branch_nodes(branch)))
}

pub fn global_best(graph: &ExplorationGraph) -> Option<&Node> {
    best_of(graph.nodes.values())
}
