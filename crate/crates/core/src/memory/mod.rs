//! Collaborative memory: the candidate pool handed to hypothesis selection,
//! built from the current branch, the global best and kernel-sampled history.

pub mod kernel;

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{branch_best, global_best, BranchId, ExplorationGraph, Hypothesis, HypothesisOrigin, NodeId};
pub use kernel::{
    cosine_similarity, interaction_potential, sample_categorical, sample_without_replacement,
    sampling_distribution, score_delta, KernelError, KernelParams,
};

/// One historical hypothesis considered by the kernel, with its potential
/// and probability (recorded in the trace for audit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDraw {
    pub node: NodeId,
    pub branch: BranchId,
    pub similarity: f64,
    pub delta: f64,
    pub potential: f64,
    pub probability: f64,
    pub picked: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub hypotheses: Vec<Hypothesis>,
    pub considered: Vec<KernelDraw>,
    /// Set when nothing outside the current branch was eligible.
    pub no_eligible_history: bool,
}

/// Samples up to `n` historical hypotheses from other branches.
///
/// Similarity is measured against the current branch's latest hypothesis
/// embedding, falling back to `reference` when the branch has none yet.
pub fn sample_candidates<R: Rng + ?Sized>(
    graph: &ExplorationGraph,
    current_branch: BranchId,
    reference: Option<&[f64]>,
    params: &KernelParams<f64>,
    rng: &mut R,
) -> Result<SampleOutcome, KernelError> {
    let frontier_embedding = graph
        .branch_frontier(current_branch)
        .and_then(|n| n.hypothesis.embedding.as_deref());
    let Some(anchor) = frontier_embedding.or(reference) else {
        return Ok(SampleOutcome {
            no_eligible_history: true,
            ..Default::default()
        });
    };
    let Some(global) = global_best(graph).and_then(|n| n.score.clone()) else {
        return Ok(SampleOutcome {
            no_eligible_history: true,
            ..Default::default()
        });
    };
    let depth = graph.branch_depth(current_branch) as u32;

    let mut seen_text = HashSet::new();
    let mut eligible = Vec::new();
    for node in graph.nodes.values() {
        if node.branch_id == current_branch {
            continue;
        }
        let Some(embedding) = node.hypothesis.embedding.as_deref() else {
            continue;
        };
        // failed nodes are eligible; their delta comes from the branch best
        let Some(best) = branch_best(graph, node.branch_id)?.and_then(|b| b.score.as_ref()) else {
            continue;
        };
        if !seen_text.insert(node.hypothesis.text.as_str()) {
            continue;
        }
        let similarity = cosine_similarity(anchor, embedding)?;
        let delta = score_delta(best, &global)?;
        eligible.push(KernelDraw {
            node: node.id,
            branch: node.branch_id,
            similarity,
            delta,
            potential: interaction_potential(similarity, depth, delta, params),
            probability: 0.0,
            picked: false,
        });
    }
    if eligible.is_empty() {
        return Ok(SampleOutcome {
            no_eligible_history: true,
            ..Default::default()
        });
    }

    let potentials: Vec<f64> = eligible.iter().map(|d| d.potential).collect();
    let probabilities = sampling_distribution(&potentials)?;
    for (draw, p) in eligible.iter_mut().zip(&probabilities) {
        draw.probability = *p;
    }
    let picks = sample_without_replacement(&probabilities, params.sample_count_n, rng);
    let mut hypotheses = Vec::with_capacity(picks.len());
    for i in picks {
        eligible[i].picked = true;
        let mut h = graph.nodes[&eligible[i].node].hypothesis.clone();
        h.origin = HypothesisOrigin::KernelSampled;
        hypotheses.push(h);
    }
    Ok(SampleOutcome {
        hypotheses,
        considered: eligible,
        no_eligible_history: false,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub current: Vec<Hypothesis>,
    pub best: Option<Hypothesis>,
    pub sampled: Vec<Hypothesis>,
    /// Validation score of the node behind a shared candidate, by text.
    #[serde(default)]
    pub measured: BTreeMap<String, f64>,
}

impl CandidatePool {
    /// Pool containing only the current branch's hypotheses.
    pub fn current_only(current: Vec<Hypothesis>) -> Self {
        CandidatePool {
            current,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.current.len() + usize::from(self.best.is_some()) + self.sampled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidates in presentation order: current, best, sampled.
    pub fn iter(&self) -> impl Iterator<Item = &Hypothesis> {
        self.current.iter().chain(self.best.iter()).chain(self.sampled.iter())
    }
}

/// Builds `current ∪ {best} ∪ sampled`, de-duplicated by text with priority
/// current > best > sampled.
pub fn build_candidate_pool<R: Rng + ?Sized>(
    branch_hypotheses: Vec<Hypothesis>,
    graph: &ExplorationGraph,
    current_branch: BranchId,
    params: &KernelParams<f64>,
    rng: &mut R,
) -> Result<(CandidatePool, SampleOutcome), KernelError> {
    if branch_hypotheses.is_empty() {
        return Err(KernelError::EmptyInput);
    }
    let mut current: Vec<Hypothesis> = branch_hypotheses
        .into_iter()
        .take(params.current_count_m)
        .map(|mut h| {
            h.origin = HypothesisOrigin::CurrentBranch;
            h
        })
        .collect();
    let mut seen: HashSet<String> = HashSet::new();
    current.retain(|h| seen.insert(h.text.clone()));

    let reference = current[0].embedding.clone();
    let sample = sample_candidates(graph, current_branch, reference.as_deref(), params, rng)?;

    let mut measured = BTreeMap::new();
    let best = global_best(graph)
        .map(|n| {
            if let Some(s) = &n.score {
                measured.insert(n.hypothesis.text.clone(), s.value);
            }
            let mut h = n.hypothesis.clone();
            h.origin = HypothesisOrigin::GlobalBest;
            h
        })
        .filter(|h| seen.insert(h.text.clone()));
    let sampled = sample
        .hypotheses
        .iter()
        .filter(|h| seen.insert(h.text.clone()))
        .inspect(|h| {
            let source = sample
                .considered
                .iter()
                .map(|d| &graph.nodes[&d.node])
                .find(|n| n.hypothesis.text == h.text && n.is_executed());
            if let Some(s) = source.and_then(|n| n.score.as_ref()) {
                measured.insert(h.text.clone(), s.value);
            }
        })
        .cloned()
        .collect();
    Ok((
        CandidatePool {
            current,
            best,
            sampled,
            measured,
        },
        sample,
    ))
}
