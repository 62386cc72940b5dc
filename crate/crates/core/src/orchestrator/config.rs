//! Run configuration, one TOML document with a section per module.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::backends::{OpenAiConfig, SyntheticConfig};
use crate::dev::DevConfig;
use crate::eval::SplitConfig;
use crate::memory::KernelParams;
use crate::planner::PlannerConfig;
use crate::reasoning::ReasoningConfig;
use crate::session::CallSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Simulated for synthetic tasks, wall clock otherwise.
    Auto,
    Wall,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub budget_s: f64,
    pub branch_count: usize,
    pub worker_count: usize,
    pub seed: u64,
    /// Stop after this many committed loops; 0 means no limit.
    pub max_loops: u64,
    pub clock: ClockMode,
    /// Simulated seconds charged per backend call.
    pub simulated_call_s: f64,
    /// Merge loops tried before the merge stage gives up on merging.
    pub max_merge_attempts: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            budget_s: 12.0 * 3600.0,
            branch_count: 3,
            worker_count: 3,
            seed: 0,
            max_loops: 0,
            clock: ClockMode::Auto,
            simulated_call_s: 0.1,
            max_merge_attempts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSection {
    /// When false the candidate pool holds only the current branch's hypotheses.
    pub enabled: bool,
    #[serde(flatten)]
    pub params: KernelParams<f64>,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            enabled: true,
            params: KernelParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneSection {
    pub enabled: bool,
    /// Relative gap to the global best, direction-aware.
    pub margin: f64,
    /// Consecutive trailing loops before a branch is pruned.
    pub patience: u32,
}

impl Default for PruneSection {
    fn default() -> Self {
        PruneSection {
            enabled: true,
            margin: 0.05,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub candidate_count: usize,
    #[serde(flatten)]
    pub split: SplitConfig,
    /// Per-candidate cap for final re-runs; 0 uses the planner's execution cap.
    pub final_cap_s: f64,
    pub grader_timeout_s: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            candidate_count: 5,
            split: SplitConfig::default(),
            final_cap_s: 0.0,
            grader_timeout_s: 600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    OpenAi,
    Synthetic,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hashed,
    OpenAi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub embedder: EmbedderKind,
    pub embedding_dim: usize,
    /// Fixture directory for the scripted backend.
    pub scripted_dir: Option<PathBuf>,
    /// When set, every response is also written here as a fixture.
    pub record_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub calls: CallSettings,
    pub openai: OpenAiConfig,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::OpenAi,
            embedder: EmbedderKind::Hashed,
            embedding_dim: 256,
            scripted_dir: None,
            record_dir: None,
            calls: CallSettings::default(),
            openai: OpenAiConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptsSection {
    /// Directory of `<step>.md` overrides.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorSection {
    pub command: Vec<String>,
    pub entrypoint: String,
    pub env_whitelist: Vec<String>,
}

impl Default for ExecutorSection {
    fn default() -> Self {
        ExecutorSection {
            command: vec!["python3".into(), "{entrypoint}".into()],
            entrypoint: "main.py".into(),
            env_whitelist: vec!["PATH".into(), "HOME".into(), "LANG".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    /// Parent of per-run directories.
    pub runs_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            runs_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub planner: PlannerConfig,
    pub kernel: KernelSection,
    pub reasoning: ReasoningConfig,
    pub dev: DevConfig,
    pub eval: EvalSection,
    pub backend: BackendSection,
    pub prune: PruneSection,
    pub prompts: PromptsSection,
    pub executor: ExecutorSection,
    pub synthetic: SyntheticConfig,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::Config(m));
        if !(self.run.budget_s > 0.0) || !self.run.budget_s.is_finite() {
            return bad(format!("run.budget_s must be positive, got {}", self.run.budget_s));
        }
        if self.run.branch_count == 0 {
            return bad("run.branch_count must be at least 1".into());
        }
        if self.run.worker_count == 0 {
            return bad("run.worker_count must be at least 1".into());
        }
        if !(self.run.simulated_call_s >= 0.0) {
            return bad("run.simulated_call_s must be non-negative".into());
        }
        self.kernel
            .params
            .validate()
            .map_err(|e| OrchestratorError::Config(format!("kernel: {e}")))?;
        if self.kernel.params.current_count_m == 0 {
            return bad("kernel.current_count_m must be at least 1".into());
        }
        if self.reasoning.hypothesis_count == 0 || self.reasoning.max_problems == 0 {
            return bad("reasoning counts must be at least 1".into());
        }
        if self.dev.max_debug_attempts == 0 || !(self.dev.safety_factor > 0.0) {
            return bad("dev.max_debug_attempts and dev.safety_factor must be positive".into());
        }
        if !(self.prune.margin >= 0.0) {
            return bad("prune.margin must be non-negative".into());
        }
        if self.eval.candidate_count == 0 {
            return bad("eval.candidate_count must be at least 1".into());
        }
        if !(self.planner.debug_sample_fraction > 0.0 && self.planner.debug_sample_fraction <= 1.0) {
            return bad("planner.debug_sample_fraction must be in (0, 1]".into());
        }
        if self.backend.kind == BackendKind::Scripted && self.backend.scripted_dir.is_none() {
            return bad("backend.scripted_dir is required for the scripted backend".into());
        }
        if self.executor.command.is_empty() {
            return bad("executor.command must not be empty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        for section in ["[run]", "[planner]", "[kernel]", "[prune]", "[eval]", "[backend]", "[synthetic]"] {
            assert!(text.contains(section), "{section} missing from\n{text}");
        }
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml("[run]\nbudget_s = 60\nbranch_count = 1\n[kernel]\nenabled = false\n").unwrap();
        assert_eq!(cfg.run.branch_count, 1);
        assert!(!cfg.kernel.enabled);
        assert_eq!(cfg.kernel.params, KernelParams::default());
        assert_eq!(cfg.prune.patience, 3);
    }

    #[test]
    fn invalid_values_rejected() {
        for doc in [
            "[run]\nbudget_s = 0",
            "[run]\nworker_count = 0",
            "[kernel]\nalpha = 1.5\nbeta = 1.0",
            "[backend]\nkind = \"scripted\"",
            "[run]\nunknown = [",
        ] {
            assert!(matches!(RunConfig::from_toml(doc), Err(OrchestratorError::Config(_))), "{doc}");
        }
    }
}
