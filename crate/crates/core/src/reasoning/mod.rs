//! Problem identification, hypothesis generation with five-dimensional
//! scoring, and selection among select / modify / create.

pub mod kv;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::CandidatePool;
use crate::model::{
    compare_scores, ComponentTag, DimScores, Hypothesis, HypothesisOrigin, ScoreOrdering, ScoreRecord, TaskSpec,
};
use crate::planner::{Plan, Stage};
use crate::prompts::{self, Vars};
use crate::session::{CallError, Session};

pub use kv::{parse_records, Record};

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error(transparent)]
    Call(#[from] CallError),
    #[error("unparseable {step} response after one reprompt: {reason}")]
    UnparseableResponse { step: &'static str, reason: String },
    #[error("{0} requires a non-empty input")]
    EmptyInput(&'static str),
    #[error("dimension weights must be non-negative and not all zero")]
    ZeroWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasoningConfig {
    pub hypothesis_count: usize,
    pub max_problems: usize,
    /// Weights of alignment, impact, novelty, feasibility, risk_reward for the offline selector.
    pub dimension_weights: [f64; 5],
    /// Pick hypotheses locally by weighted dimension score instead of asking the backend.
    pub offline_selector: bool,
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        ReasoningConfig {
            hypothesis_count: 3,
            max_problems: 3,
            dimension_weights: [1.0; 5],
            offline_selector: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemCategory {
    DataRelated,
    ModelRelated,
    EvaluationRelated,
    ImplementationRelated,
}

impl ProblemCategory {
    pub fn parse(s: &str) -> Option<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphabetic()).collect::<String>().to_ascii_lowercase();
        let norm = norm.trim_end_matches("related");
        match norm {
            "data" => Some(ProblemCategory::DataRelated),
            "model" => Some(ProblemCategory::ModelRelated),
            "evaluation" => Some(ProblemCategory::EvaluationRelated),
            "implementation" => Some(ProblemCategory::ImplementationRelated),
            _ => None,
        }
    }
}

impl fmt::Display for ProblemCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub description: String,
    pub category: ProblemCategory,
}

pub fn stage_guidance(stage: Stage) -> &'static str {
    match stage {
        Stage::Draft => prompts::DRAFT_STAGE_GUIDANCE,
        Stage::Improve => prompts::IMPROVE_STAGE_GUIDANCE,
        Stage::Merge => prompts::MERGE_STAGE_GUIDANCE,
    }
}

/// Calls `step`, parses the reply, and on failure asks once more with the
/// parse error appended to `retry_var`.
fn call_parsed<T>(
    session: &Session<'_>,
    step: &'static str,
    vars: &mut Vars,
    retry_var: &'static str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, ReasoningError> {
    let first = session.call(step, vars)?;
    let reason = match parse(&first.text) {
        Ok(v) => return Ok(v),
        Err(reason) => reason,
    };
    tracing::warn!(step, %reason, "reprompting after unparseable reply");
    let original = vars.get(retry_var).cloned().unwrap_or_default();
    vars.insert(
        retry_var,
        format!("{original}\n\nYour previous reply could not be used ({reason}). Follow the reply format exactly."),
    );
    let second = session.call(step, vars)?;
    parse(&second.text).map_err(|reason| ReasoningError::UnparseableResponse { step, reason })
}

fn field<'a>(r: &'a Record, key: &str) -> Result<&'a str, String> {
    r.get(key)
        .map(String::as_str)
        .filter(|v| !v.trim().is_empty())
        .ok_or_else(|| format!("missing {key:?}"))
}

pub fn parse_problems(text: &str, max: usize) -> Result<Vec<Problem>, String> {
    let records = parse_records(text)?;
    let mut out = Vec::new();
    for r in &records {
        let description = field(r, "problem")?.to_string();
        let raw = field(r, "category")?;
        let category = ProblemCategory::parse(raw).ok_or_else(|| format!("unknown category {raw:?}"))?;
        out.push(Problem {
            id: format!("P{}", out.len() + 1),
            description,
            category,
        });
    }
    out.truncate(max.max(1));
    Ok(out)
}

pub fn identify_problems(
    context: &str,
    task: &TaskSpec,
    session: &Session<'_>,
    cfg: &ReasoningConfig,
) -> Result<Vec<Problem>, ReasoningError> {
    if context.trim().is_empty() {
        return Err(ReasoningError::EmptyInput("identify_problems context"));
    }
    let mut vars = Vars::new();
    vars.insert("task_summary", task.summary());
    vars.insert("context", context.to_string());
    call_parsed(session, prompts::IDENTIFY_PROBLEMS, &mut vars, "context", |t| {
        parse_problems(t, cfg.max_problems)
    })
}

pub fn format_problems(problems: &[Problem]) -> String {
    problems
        .iter()
        .map(|p| format!("{} [{}] {}", p.id, p.category, p.description))
        .collect::<Vec<_>>()
        .join("\n")
}

fn dim(r: &Record, key: &str) -> Result<u8, String> {
    let raw = field(r, key)?;
    let v: i64 = raw.trim().parse().map_err(|_| format!("{key} is not an integer: {raw:?}"))?;
    if !(1..=10).contains(&v) {
        return Err(format!("{key} = {v} is outside 1..=10"));
    }
    Ok(v as u8)
}

pub fn parse_hypotheses(text: &str, problems: &[Problem], max: usize) -> Result<Vec<Hypothesis>, String> {
    let known: BTreeSet<&str> = problems.iter().map(|p| p.id.as_str()).collect();
    let mut out = Vec::new();
    for r in parse_records(text)? {
        let raw_tag = field(&r, "component")?;
        let component_tag = ComponentTag::parse(raw_tag).ok_or_else(|| format!("unknown component {raw_tag:?}"))?;
        let problem_ref = field(&r, "problem")?.trim().to_string();
        if !known.is_empty() && !known.contains(problem_ref.as_str()) {
            return Err(format!("problem {problem_ref:?} is not one of {known:?}"));
        }
        let scores = [
            dim(&r, "alignment")?,
            dim(&r, "impact")?,
            dim(&r, "novelty")?,
            dim(&r, "feasibility")?,
            dim(&r, "risk_reward")?,
        ];
        out.push(Hypothesis {
            text: field(&r, "hypothesis")?.to_string(),
            component_tag,
            problem_ref,
            dim_scores: DimScores::new(scores).map_err(|e| e.to_string())?,
            origin: HypothesisOrigin::CurrentBranch,
            embedding: None,
        });
    }
    out.truncate(max.max(1));
    Ok(out)
}

pub struct GenerationInput<'a> {
    pub problems: &'a [Problem],
    pub plan: &'a Plan,
    pub parent_summary: &'a str,
    pub pool_context: &'a str,
}

pub fn generate_hypotheses(
    input: &GenerationInput<'_>,
    task: &TaskSpec,
    session: &Session<'_>,
    cfg: &ReasoningConfig,
) -> Result<Vec<Hypothesis>, ReasoningError> {
    if input.problems.is_empty() {
        return Err(ReasoningError::EmptyInput("generate_hypotheses problems"));
    }
    let mut vars = Vars::new();
    vars.insert("task_summary", task.summary());
    vars.insert("stage", input.plan.stage.as_str().into());
    vars.insert("stage_guidance", stage_guidance(input.plan.stage).into());
    vars.insert("novelty_bias", format!("{:.2}", input.plan.novelty_bias));
    vars.insert("parent_summary", input.parent_summary.to_string());
    vars.insert("problems", format_problems(input.problems));
    vars.insert("pool_context", input.pool_context.to_string());
    vars.insert("hypothesis_count", cfg.hypothesis_count.to_string());
    call_parsed(session, prompts::GENERATE_HYPOTHESES, &mut vars, "problems", |t| {
        parse_hypotheses(t, input.problems, cfg.hypothesis_count)
    })
}

pub fn aggregate_dim_scores(scores: &DimScores, weights: &[f64; 5]) -> Result<f64, ReasoningError> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || total <= 0.0 {
        return Err(ReasoningError::ZeroWeights);
    }
    Ok(scores
        .0
        .iter()
        .zip(weights)
        .map(|(s, w)| f64::from(*s) * w)
        .sum::<f64>()
        / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionAction {
    Select,
    Modify,
    Create,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub action: SelectionAction,
    pub hypothesis: Hypothesis,
    /// Labels (`C1`, `C2`, ...) of the pool candidates used.
    pub source_refs: Vec<String>,
    /// Set when a Select naming an unknown candidate was turned into a Modify.
    #[serde(default)]
    pub downgraded: bool,
}

/// Scores of the branch being extended and of the run as a whole.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SotaComparison {
    pub branch_best: Option<ScoreRecord>,
    pub global_best: Option<ScoreRecord>,
}

impl SotaComparison {
    /// True when the branch's best does not beat the global best.
    pub fn branch_trails(&self) -> bool {
        match (&self.branch_best, &self.global_best) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(b), Some(g)) => !matches!(compare_scores(b, g), Ok(ScoreOrdering::ABetter)),
        }
    }

    pub fn summary(&self) -> String {
        let fmt = |s: &Option<ScoreRecord>| match s {
            Some(r) => format!("{:.4} {}", r.value, r.metric_name),
            None => "none yet".into(),
        };
        format!(
            "Best score on this branch: {}. Best score across all branches: {}.",
            fmt(&self.branch_best),
            fmt(&self.global_best)
        )
    }
}

pub fn priority_directive(sota: &SotaComparison) -> &'static str {
    if sota.branch_trails() {
        prompts::PRIORITIZE_SHARED
    } else {
        prompts::PRIORITIZE_CURRENT
    }
}

fn origin_label(o: HypothesisOrigin) -> &'static str {
    match o {
        HypothesisOrigin::CurrentBranch => "current branch",
        HypothesisOrigin::GlobalBest => "global best",
        HypothesisOrigin::KernelSampled => "other branch",
        HypothesisOrigin::Created => "created",
        HypothesisOrigin::Modified => "modified",
    }
}

pub fn format_candidates(pool: &CandidatePool) -> String {
    pool.iter()
        .enumerate()
        .map(|(i, h)| {
            let measured = pool
                .measured
                .get(&h.text)
                .map_or(String::new(), |v| format!(", validation {v:.4}"));
            format!(
                "C{} ({}, {}, {}{measured}): {}",
                i + 1,
                origin_label(h.origin),
                h.component_tag.as_str(),
                h.problem_ref,
                h.text
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn token_set(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Index of the candidate whose text shares the most tokens with `text`
/// (Jaccard); ties go to the earlier candidate.
pub fn nearest_candidate(candidates: &[&Hypothesis], text: &str) -> usize {
    let probe = token_set(text);
    let mut best = (0, -1.0);
    for (i, h) in candidates.iter().enumerate() {
        let other = token_set(&h.text);
        let union = probe.union(&other).count();
        let sim = if union == 0 {
            0.0
        } else {
            probe.intersection(&other).count() as f64 / union as f64
        };
        if sim > best.1 {
            best = (i, sim);
        }
    }
    best.0
}

fn candidate_index(label: &str, len: usize) -> Option<usize> {
    let n: usize = label.trim().trim_start_matches(['C', 'c']).parse().ok()?;
    (1..=len).contains(&n).then(|| n - 1)
}

pub fn parse_selection(text: &str, pool: &CandidatePool) -> Result<SelectionOutcome, String> {
    let candidates: Vec<&Hypothesis> = pool.iter().collect();
    let records = parse_records(text)?;
    let r = &records[0];
    let action = match field(r, "action")?.to_ascii_lowercase().as_str() {
        "select" => SelectionAction::Select,
        "modify" => SelectionAction::Modify,
        "create" | "generate" => SelectionAction::Create,
        other => return Err(format!("unknown action {other:?}")),
    };
    let named = r.get("candidate").and_then(|c| candidate_index(c, candidates.len()));
    let reply_text = r.get("hypothesis").map(|s| s.trim()).filter(|s| !s.is_empty());
    let tag = |fallback: Option<ComponentTag>| -> Result<ComponentTag, String> {
        match r.get("component").map(|s| s.trim()).filter(|s| !s.is_empty()) {
            Some(raw) => ComponentTag::parse(raw).ok_or_else(|| format!("unknown component {raw:?}")),
            None => fallback.ok_or_else(|| "missing \"component\"".to_string()),
        }
    };
    let problem = |fallback: Option<&str>| -> Result<String, String> {
        r.get("problem")
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .or(fallback.map(str::to_string))
            .ok_or_else(|| "missing \"problem\"".to_string())
    };

    match (action, named) {
        (SelectionAction::Select, Some(i)) => Ok(SelectionOutcome {
            action,
            hypothesis: candidates[i].clone(),
            source_refs: vec![format!("C{}", i + 1)],
            downgraded: false,
        }),
        (SelectionAction::Select, None) => {
            let probe = reply_text
                .map(str::to_string)
                .or_else(|| r.get("candidate").cloned())
                .unwrap_or_default();
            let i = nearest_candidate(&candidates, &probe);
            tracing::warn!(candidate = ?r.get("candidate"), nearest = i + 1, "select named an unknown candidate; treating as modify");
            let base = candidates[i];
            Ok(SelectionOutcome {
                action: SelectionAction::Modify,
                hypothesis: Hypothesis {
                    text: reply_text.unwrap_or(&base.text).to_string(),
                    component_tag: tag(Some(base.component_tag))?,
                    problem_ref: problem(Some(&base.problem_ref))?,
                    dim_scores: base.dim_scores,
                    origin: HypothesisOrigin::Modified,
                    embedding: None,
                },
                source_refs: vec![format!("C{}", i + 1)],
                downgraded: true,
            })
        }
        (SelectionAction::Modify, _) => {
            let text = reply_text.ok_or("modify requires \"hypothesis\"")?;
            let i = named.unwrap_or_else(|| nearest_candidate(&candidates, text));
            let base = candidates[i];
            Ok(SelectionOutcome {
                action,
                hypothesis: Hypothesis {
                    text: text.to_string(),
                    component_tag: tag(Some(base.component_tag))?,
                    problem_ref: problem(Some(&base.problem_ref))?,
                    dim_scores: base.dim_scores,
                    origin: HypothesisOrigin::Modified,
                    embedding: None,
                },
                source_refs: vec![format!("C{}", i + 1)],
                downgraded: false,
            })
        }
        (SelectionAction::Create, _) => {
            let text = reply_text.ok_or("create requires \"hypothesis\"")?;
            let sources: Vec<usize> = r
                .get("sources")
                .map(|s| s.split(',').filter_map(|c| candidate_index(c, candidates.len())).collect())
                .unwrap_or_default();
            let first = sources.first().map(|i| candidates[*i]);
            Ok(SelectionOutcome {
                action,
                hypothesis: Hypothesis {
                    text: text.to_string(),
                    component_tag: tag(first.map(|h| h.component_tag))?,
                    problem_ref: problem(first.map(|h| h.problem_ref.as_str()).or(Some("P1")))?,
                    dim_scores: first.map_or(DimScores([5; 5]), |h| h.dim_scores),
                    origin: HypothesisOrigin::Created,
                    embedding: None,
                },
                source_refs: sources.iter().map(|i| format!("C{}", i + 1)).collect(),
                downgraded: false,
            })
        }
    }
}

/// Argmax of the weighted dimension score over the pool; ties go to the
/// earlier candidate.
pub fn offline_select(pool: &CandidatePool, weights: &[f64; 5]) -> Result<SelectionOutcome, ReasoningError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, h) in pool.iter().enumerate() {
        let score = aggregate_dim_scores(&h.dim_scores, weights)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    let (i, _) = best.ok_or(ReasoningError::EmptyInput("candidate pool"))?;
    Ok(SelectionOutcome {
        action: SelectionAction::Select,
        hypothesis: pool.iter().nth(i).expect("index in range").clone(),
        source_refs: vec![format!("C{}", i + 1)],
        downgraded: false,
    })
}

pub fn select_hypothesis(
    pool: &CandidatePool,
    plan: &Plan,
    sota: &SotaComparison,
    parent_summary: &str,
    task: &TaskSpec,
    session: &Session<'_>,
) -> Result<SelectionOutcome, ReasoningError> {
    if pool.current.is_empty() {
        return Err(ReasoningError::EmptyInput("candidate pool"));
    }
    let mut vars = Vars::new();
    vars.insert("task_summary", task.summary());
    vars.insert("stage", plan.stage.as_str().into());
    vars.insert("stage_guidance", stage_guidance(plan.stage).into());
    vars.insert("novelty_bias", format!("{:.2}", plan.novelty_bias));
    vars.insert("sota_summary", sota.summary());
    vars.insert("priority_directive", priority_directive(sota).into());
    vars.insert("parent_summary", parent_summary.to_string());
    vars.insert("candidates", format_candidates(pool));
    call_parsed(session, prompts::SELECT_HYPOTHESIS, &mut vars, "candidates", |t| {
        parse_selection(t, pool)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub observation: String,
    pub hypothesis_supported: Option<bool>,
    pub lesson: String,
}

impl Feedback {
    pub fn render(&self) -> String {
        let verdict = match self.hypothesis_supported {
            Some(true) => "supported",
            Some(false) => "not supported",
            None => "inconclusive",
        };
        format!("{} Hypothesis {verdict}. Lesson: {}", self.observation, self.lesson)
    }
}

pub fn parse_feedback(text: &str) -> Result<Feedback, String> {
    let records = parse_records(text)?;
    let r = &records[0];
    let supported = r.get("hypothesis_supported").map(|s| s.trim().to_ascii_lowercase());
    Ok(Feedback {
        observation: field(r, "observation")?.to_string(),
        hypothesis_supported: match supported.as_deref() {
            Some("yes" | "true") => Some(true),
            Some("no" | "false") => Some(false),
            _ => None,
        },
        lesson: r.get("lesson").cloned().unwrap_or_default(),
    })
}

pub fn summarize_feedback(
    hypothesis: &Hypothesis,
    outcome: &str,
    sota: &SotaComparison,
    task: &TaskSpec,
    session: &Session<'_>,
) -> Result<Feedback, ReasoningError> {
    let mut vars = Vars::new();
    vars.insert("task_summary", task.summary());
    vars.insert("hypothesis", hypothesis.text.clone());
    vars.insert("outcome", outcome.to_string());
    vars.insert("sota_summary", sota.summary());
    call_parsed(session, prompts::FEEDBACK, &mut vars, "outcome", parse_feedback)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyp(text: &str, scores: [u8; 5]) -> Hypothesis {
        Hypothesis {
            text: text.into(),
            component_tag: ComponentTag::Model,
            problem_ref: "P1".into(),
            dim_scores: DimScores(scores),
            origin: HypothesisOrigin::CurrentBranch,
            embedding: None,
        }
    }

    #[test]
    fn aggregate_examples() {
        let w = [1.0; 5];
        assert_eq!(aggregate_dim_scores(&DimScores([5; 5]), &w).unwrap(), 5.0);
        assert_eq!(aggregate_dim_scores(&DimScores([10; 5]), &w).unwrap(), 10.0);
        // (8 + 6 + 4 + 10 + 7) / 5
        assert_eq!(aggregate_dim_scores(&DimScores([8, 6, 4, 10, 7]), &w).unwrap(), 7.0);
        assert!(matches!(
            aggregate_dim_scores(&DimScores([5; 5]), &[0.0; 5]),
            Err(ReasoningError::ZeroWeights)
        ));
    }

    #[test]
    fn offline_selector_breaks_ties_early() {
        let pool = CandidatePool::current_only(vec![hyp("a", [5; 5]), hyp("b", [7; 5]), hyp("c", [7; 5])]);
        let out = offline_select(&pool, &[1.0; 5]).unwrap();
        assert_eq!(out.hypothesis.text, "b");
        assert_eq!(out.source_refs, vec!["C2"]);
    }

    #[test]
    fn select_of_unknown_candidate_becomes_modify() {
        let pool = CandidatePool::current_only(vec![hyp("tune the learning rate", [5; 5]), hyp("add lag features", [5; 5])]);
        let out = parse_selection("```kv\naction: select\ncandidate: C9\nhypothesis: add more lag features\n```", &pool).unwrap();
        assert_eq!(out.action, SelectionAction::Modify);
        assert!(out.downgraded);
        assert_eq!(out.source_refs, vec!["C2"]);
        assert_eq!(out.hypothesis.origin, HypothesisOrigin::Modified);
    }

    #[test]
    fn problem_categories_parse_loosely() {
        assert_eq!(ProblemCategory::parse("Data-Related"), Some(ProblemCategory::DataRelated));
        assert_eq!(ProblemCategory::parse("model"), Some(ProblemCategory::ModelRelated));
        assert_eq!(ProblemCategory::parse("weather"), None);
    }

    #[test]
    fn trailing_rule() {
        let s = |v| ScoreRecord {
            value: v,
            metric_name: "acc".into(),
            higher_is_better: true,
            source: crate::model::ScoreSource::Validation,
        };
        let behind = SotaComparison {
            branch_best: Some(s(0.7)),
            global_best: Some(s(0.9)),
        };
        assert_eq!(priority_directive(&behind), prompts::PRIORITIZE_SHARED);
        let holding = SotaComparison {
            branch_best: Some(s(0.9)),
            global_best: Some(s(0.9)),
        };
        assert!(holding.branch_trails());
        assert_eq!(priority_directive(&SotaComparison::default()), prompts::PRIORITIZE_CURRENT);
    }
}
