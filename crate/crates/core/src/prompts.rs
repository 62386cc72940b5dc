//! Prompt templates, addressable by step name. The built-in set is compiled
//! in; a directory of `<step>.md` files overrides individual steps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const TASK_ANALYSIS: &str = "task_analysis";
pub const IDENTIFY_PROBLEMS: &str = "identify_problems";
pub const GENERATE_HYPOTHESES: &str = "generate_hypotheses";
pub const SELECT_HYPOTHESIS: &str = "select_hypothesis";
pub const DRAFT: &str = "draft";
pub const MERGE: &str = "merge";
pub const FEEDBACK: &str = "feedback";
pub const SELECT_SOTA: &str = "select_sota";

pub const STEPS: [&str; 8] = [
    TASK_ANALYSIS,
    IDENTIFY_PROBLEMS,
    GENERATE_HYPOTHESES,
    SELECT_HYPOTHESIS,
    DRAFT,
    MERGE,
    FEEDBACK,
    SELECT_SOTA,
];

/// Steps that belong to the development phase (code writing); the rest are research.
pub fn is_development_step(step: &str) -> bool {
    matches!(step, DRAFT | MERGE)
}

pub fn is_known_step(step: &str) -> bool {
    STEPS.contains(&step)
}

// Directive phrases other modules and tests rely on.
pub const DRAFT_STAGE_GUIDANCE: &str = "Focus on simple, quick-to-implement hypotheses.";
pub const IMPROVE_STAGE_GUIDANCE: &str =
    "Focus on meaningful gains without overcomplicating the current solution.";
pub const MERGE_STAGE_GUIDANCE: &str =
    "Synthesize strengths from multiple traces into one unified solution.";
pub const PRIORITIZE_SHARED: &str =
    "This branch does not beat the global best: prioritize the global best hypothesis and the hypotheses sampled from other branches.";
pub const PRIORITIZE_CURRENT: &str = "Prioritize the hypotheses proposed for the current branch.";
pub const FORBID_ENSEMBLE: &str = "Do not use ensembles of multiple models.";
pub const FORBID_CROSS_VALIDATION: &str =
    "Do not use k-fold cross-validation; a single holdout split is enough.";
pub const ALLOW_HEAVY: &str = "Ensembles and cross-validation are allowed if they pay for their runtime.";
pub const EDIT_PARENT: &str =
    "Edit the parent solution below rather than starting over; change only what the hypothesis requires.";

const BUILTIN: [(&str, &str); 8] = [
    (TASK_ANALYSIS, include_str!("../prompts/task_analysis.md")),
    (IDENTIFY_PROBLEMS, include_str!("../prompts/identify_problems.md")),
    (GENERATE_HYPOTHESES, include_str!("../prompts/generate_hypotheses.md")),
    (SELECT_HYPOTHESIS, include_str!("../prompts/select_hypothesis.md")),
    (DRAFT, include_str!("../prompts/draft.md")),
    (MERGE, include_str!("../prompts/merge.md")),
    (FEEDBACK, include_str!("../prompts/feedback.md")),
    (SELECT_SOTA, include_str!("../prompts/select_sota.md")),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown prompt step {0:?}")]
    UnknownStep(String),
    #[error("template {step} references undefined variable {var:?}")]
    MissingVariable { step: String, var: String },
    #[error("reading template override {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<String, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        PromptLibrary {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl PromptLibrary {
    pub fn with_overrides(dir: Option<&Path>) -> Result<Self, PromptError> {
        let mut lib = Self::default();
        if let Some(dir) = dir {
            for step in STEPS {
                let path = dir.join(format!("{step}.md"));
                if path.exists() {
                    let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    lib.templates.insert(step.to_string(), text);
                }
            }
        }
        Ok(lib)
    }

    pub fn template(&self, step: &str) -> Result<&str, PromptError> {
        self.templates
            .get(step)
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnknownStep(step.into()))
    }

    pub fn render(&self, step: &str, vars: &Vars) -> Result<String, PromptError> {
        render(step, self.template(step)?, vars)
    }
}

pub type Vars = BTreeMap<&'static str, String>;

/// Substitutes `{{ name }}` placeholders. Every placeholder must be bound.
pub fn render(step: &str, template: &str, vars: &Vars) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            rest = "";
            break;
        };
        let name = after[..end].trim();
        let value = vars.get(name).ok_or_else(|| PromptError::MissingVariable {
            step: step.into(),
            var: name.into(),
        })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_cover_every_step() {
        let lib = PromptLibrary::default();
        for step in STEPS {
            assert!(!lib.template(step).unwrap().is_empty());
        }
        assert!(lib.template("nope").is_err());
    }

    #[test]
    fn render_substitutes_and_rejects_unbound() {
        let mut vars = Vars::new();
        vars.insert("a", "1".into());
        assert_eq!(render("t", "x {{ a }} y {{a}}", &vars).unwrap(), "x 1 y 1");
        assert!(matches!(
            render("t", "{{ b }}", &vars),
            Err(PromptError::MissingVariable { .. })
        ));
        assert_eq!(render("t", "open {{ only", &vars).unwrap(), "open {{ only");
    }

    #[test]
    fn overrides_replace_single_steps() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("draft.md"), "custom {{ hypothesis }}").unwrap();
        let lib = PromptLibrary::with_overrides(Some(dir.path())).unwrap();
        assert_eq!(lib.template(DRAFT).unwrap(), "custom {{ hypothesis }}");
        assert_eq!(
            lib.template(FEEDBACK).unwrap(),
            PromptLibrary::default().template(FEEDBACK).unwrap()
        );
    }
}
