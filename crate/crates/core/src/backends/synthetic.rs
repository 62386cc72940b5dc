//! Offline stand-in for the model and the sandbox.
//!
//! Solutions are points on a seeded [`Landscape`]. A hypothesis either starts
//! a new point or sets one coordinate (the component it touches) to a new
//! value; the selector applies it to the parent in front of it, so a setting
//! found on one branch can be tried on another. Candidates are judged with a
//! noisy view of the landscape and "code" is a small directive block:
//!
//! ````text
//! ```synthetic
//! params: 0.310, 0.740
//! cost: 4.120
//! bug: false
//! ```
//! ````
//!
//! [`SyntheticExecutor`] runs such directives: the debug leg prints the debug
//! block at a tenth of the cost, the full leg writes a submission whose
//! accuracy tracks the landscape value at `params`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::embed::fnv1a64;
use super::landscape::{Landscape, LandscapeConfig};
use super::{approx_tokens, BackendError, PromptBackend, PromptRequest, PromptResponse, Usage};
use crate::dev::debug_block::format_debug_block;
use crate::dev::{ExecError, ExecOutput, Executor, RunMode, Workspace};
use crate::model::ComponentTag;
use crate::prompts;

pub const FEATURES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub landscape_seed: u64,
    pub landscape: LandscapeConfig,
    /// Standard deviation of the judge's view of the landscape.
    pub judge_noise: f64,
    /// Standard deviation of the validation score around the landscape value.
    pub score_noise: f64,
    /// Simulated seconds of one full run, before jitter.
    pub full_cost_s: f64,
    pub cost_jitter: f64,
    /// Simulated seconds per backend call.
    pub call_latency_s: f64,
    /// Chance that a fresh draft crashes until revised.
    pub bug_rate: f64,
    /// Step size at zero novelty and at full novelty.
    pub step_min: f64,
    pub step_max: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            landscape_seed: 0,
            landscape: LandscapeConfig::default(),
            judge_noise: 0.04,
            score_noise: 0.01,
            full_cost_s: 4.0,
            cost_jitter: 0.25,
            call_latency_s: 0.1,
            bug_rate: 0.25,
            step_min: 0.03,
            step_max: 0.25,
        }
    }
}

/// Landscape plus the planted labelling rule shared by backend, executor
/// and task generator.
#[derive(Debug)]
pub struct SyntheticWorld {
    pub cfg: SyntheticConfig,
    pub landscape: Landscape<f64>,
}

impl SyntheticWorld {
    pub fn new(cfg: SyntheticConfig) -> Arc<Self> {
        let landscape = Landscape::generate(cfg.landscape_seed, &cfg.landscape);
        Arc::new(SyntheticWorld { cfg, landscape })
    }

    pub fn dimension(&self) -> usize {
        self.landscape.dimension()
    }

    /// Landscape value at a point, clamped into the unit cube first.
    pub fn value(&self, point: &[f64]) -> f64 {
        let clamped: Vec<f64> = point.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        self.landscape.score(&clamped).unwrap_or(0.0)
    }
}

/// Ground-truth label of a synthetic row.
pub fn planted_label(features: &[f64]) -> u8 {
    u8::from(features[0] + features[1] - features[2] > 0.0)
}

fn rng_for(world_seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(world_seed ^ fnv1a64(key.as_bytes()))
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
}

pub fn format_point(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|v| format!("{v:.3}")).collect();
    format!("({})", parts.join(", "))
}

/// Reads the point after the first `target (` marker.
pub fn parse_target(text: &str) -> Option<Vec<f64>> {
    let start = text.find("target (")? + "target (".len();
    let end = start + text[start..].find(')')?;
    text[start..end]
        .split(',')
        .map(|s| s.trim().parse::<f64>().ok())
        .collect()
}

/// Reads `Set p<i> to <v>` from a hypothesis.
pub fn parse_set(text: &str) -> Option<(usize, f64)> {
    let start = text.find("Set p")? + "Set p".len();
    let rest = &text[start..];
    let (axis, rest) = rest.split_once(" to ")?;
    let value: String = rest
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_digit() || matches!(c, '.' | '-'))
        .collect();
    Some((axis.trim().parse().ok()?, value.parse().ok()?))
}

/// Component a coordinate stands for.
pub fn axis_component(axis: usize) -> ComponentTag {
    ComponentTag::ALL[1 + axis % (ComponentTag::ALL.len() - 1)]
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 5e-4)
}

/// Every `params:` line in a block of code, in order.
pub fn parse_params_lines(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter_map(|l| l.trim().strip_prefix("params:"))
        .filter_map(|rest| rest.split(',').map(|s| s.trim().parse::<f64>().ok()).collect())
        .collect()
}

/// Body of a `## <name>` section of a rendered prompt.
pub fn section<'a>(prompt: &'a str, name: &str) -> &'a str {
    let header = format!("## {name}\n");
    let Some(pos) = prompt.find(&header) else {
        return "";
    };
    let body = &prompt[pos + header.len()..];
    match body.find("\n## ") {
        Some(end) => &body[..end],
        None => body,
    }
}

fn value_after(text: &str, label: &str) -> Option<f64> {
    let start = text.find(label)? + label.len();
    let token: String = text[start..]
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | 'e' | 'E' | '+'))
        .collect();
    token.parse().ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Directive {
    pub params: Vec<f64>,
    pub cost_s: f64,
    pub bug: bool,
}

impl Directive {
    pub fn render(&self) -> String {
        let params: Vec<String> = self.params.iter().map(|v| format!("{v:.3}")).collect();
        format!(
            "```synthetic\nparams: {}\ncost: {:.3}\nbug: {}\n```\n",
            params.join(", "),
            self.cost_s,
            self.bug
        )
    }

    pub fn parse(code: &str) -> Option<Directive> {
        let params = parse_params_lines(code).into_iter().next()?;
        let mut cost_s = None;
        let mut bug = None;
        for line in code.lines() {
            let line = line.trim();
            if let Some(v) = line.strip_prefix("cost:") {
                cost_s = v.trim().parse().ok();
            } else if let Some(v) = line.strip_prefix("bug:") {
                bug = v.trim().parse().ok();
            }
        }
        Some(Directive {
            params,
            cost_s: cost_s?,
            bug: bug?,
        })
    }
}

pub struct SyntheticBackend {
    world: Arc<SyntheticWorld>,
}

const PROBLEMS: [(&str, &str); 5] = [
    ("The validation score has plateaued around the current parameters.", "ModelRelated"),
    ("The current parameters sit in a region that may be a local optimum.", "ModelRelated"),
    ("Feature interactions are not exploited by the current pipeline.", "DataRelated"),
    ("Validation scores are noisy, so small gains may not be real.", "EvaluationRelated"),
    ("The training script wastes time on redundant preprocessing.", "ImplementationRelated"),
];

impl SyntheticBackend {
    pub fn new(world: Arc<SyntheticWorld>) -> Self {
        SyntheticBackend { world }
    }

    fn judge<R: Rng + ?Sized>(&self, rng: &mut R, point: &[f64]) -> f64 {
        self.world.value(point) + gauss(rng, self.world.cfg.judge_noise)
    }

    fn step<R: Rng + ?Sized>(&self, rng: &mut R, from: &[f64], sigma: f64) -> Vec<f64> {
        from.iter()
            .map(|v| (v + gauss(rng, sigma)).clamp(0.0, 1.0))
            .collect()
    }

    /// Step size for a novelty bias in [0, 1].
    fn sigma(&self, novelty: f64) -> f64 {
        let cfg = &self.world.cfg;
        cfg.step_min + (cfg.step_max - cfg.step_min) * novelty
    }

    fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.world.dimension()).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    fn quantize(p: &[f64]) -> Vec<f64> {
        p.iter().map(|v| (v * 1000.0).round() / 1000.0).collect()
    }

    fn task_analysis(&self) -> String {
        json!({
            "Task Type": "Classification",
            "Data Type": "Tabular",
            "Brief Description": "Predict a binary label from five numeric features.",
            "Dataset Description": "train.csv with id, f0..f4 and label; test.csv without label.",
            "Submission Specifications": "CSV with columns id,label.",
            "Metric Evaluation Description": "Fraction of correctly predicted labels.",
            "Metric Name": "accuracy",
            "Metric Direction": true,
            "Longer time limit required": false
        })
        .to_string()
    }

    fn identify_problems<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let first = rng.random_range(0..PROBLEMS.len());
        let second = (first + 1 + rng.random_range(0..PROBLEMS.len() - 1)) % PROBLEMS.len();
        let records: Vec<String> = [first, second]
            .iter()
            .map(|i| format!("problem: {}\ncategory: {}", PROBLEMS[*i].0, PROBLEMS[*i].1))
            .collect();
        format!("```kv\n{}\n```\n", records.join("\n---\n"))
    }

    fn set_text(axis: usize, point: &[f64]) -> String {
        format!("Set p{axis} to {:.3}, moving to target {}", point[axis], format_point(point))
    }

    /// Point reached by a candidate from `parent`: a coordinate setting is
    /// applied to the parent, anything else is taken at its stated target.
    fn apply(parent: Option<&[f64]>, text: &str) -> Option<Vec<f64>> {
        match (parent, parse_set(text)) {
            (Some(p), Some((axis, v))) if axis < p.len() => {
                let mut out = p.to_vec();
                out[axis] = v.clamp(0.0, 1.0);
                Some(out)
            }
            _ => parse_target(text),
        }
    }

    fn generate<R: Rng + ?Sized>(&self, rng: &mut R, prompt: &str) -> String {
        let count = value_after(prompt, "Hypotheses to propose:").map_or(3, |v| v as usize).max(1);
        let novelty = value_after(prompt, "Novelty bias:").unwrap_or(0.5).clamp(0.0, 1.0);
        let parent = parse_target(section(prompt, "Parent solution"));
        let sigma = self.sigma(novelty);
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let (text, tag, point, moved) = match &parent {
                None => {
                    let p = Self::quantize(&self.random_point(rng));
                    let tag = ComponentTag::ALL[rng.random_range(0..ComponentTag::ALL.len())];
                    (format!("Start a new solution at target {}", format_point(&p)), tag, p, 1.0)
                }
                Some(from) => {
                    let axis = rng.random_range(0..from.len());
                    let mut p = from.clone();
                    p[axis] = (from[axis] + gauss(rng, sigma)).clamp(0.0, 1.0);
                    let p = Self::quantize(&p);
                    let moved = (p[axis] - from[axis]).abs();
                    (Self::set_text(axis, &p), axis_component(axis), p, moved)
                }
            };
            let estimate = self.judge(rng, &point);
            let impact = (1.0 + 9.0 * estimate).round().clamp(1.0, 10.0) as u8;
            let novelty_score = (1.0 + 9.0 * (moved / 0.3).min(1.0)).round() as u8;
            records.push(format!(
                "hypothesis: {text}\ncomponent: {}\nproblem: P1\nalignment: 7\nimpact: {impact}\nnovelty: {novelty_score}\nfeasibility: 8\nrisk_reward: {}",
                tag.as_str(),
                (impact + novelty_score).div_ceil(2)
            ));
        }
        format!("```kv\n{}\n```\n", records.join("\n---\n"))
    }

    fn select<R: Rng + ?Sized>(&self, rng: &mut R, prompt: &str) -> String {
        let parent = parse_target(section(prompt, "Parent solution"));
        struct Pick {
            label: String,
            point: Vec<f64>,
            estimate: f64,
            shared: bool,
            as_stated: bool,
        }
        let mut best: Option<Pick> = None;
        for line in section(prompt, "Candidates").lines() {
            let line = line.trim();
            let Some(label) = line.split_whitespace().next().filter(|l| l.starts_with('C')) else {
                continue;
            };
            let Some(point) = Self::apply(parent.as_deref(), line) else {
                continue;
            };
            let as_stated = parse_target(line).is_some_and(|t| same_point(&t, &point));
            let shared = line.contains("(global best,") || line.contains("(other branch,");
            let head = &line[..line.find("):").unwrap_or(line.len())];
            // a shared point reached as stated has a measured score
            let measured = (shared && as_stated).then(|| value_after(head, "validation")).flatten();
            let estimate = measured.unwrap_or_else(|| self.judge(rng, &point));
            if best.as_ref().is_none_or(|b| estimate > b.estimate) {
                best = Some(Pick {
                    label: label.trim_end_matches(':').to_string(),
                    point,
                    estimate,
                    shared,
                    as_stated,
                });
            }
        }
        let Some(pick) = best else {
            return "```kv\naction: create\nhypothesis: Start a new solution at target (0.500, 0.500)\ncomponent: Model\nproblem: P1\n```\n".into();
        };
        let already_run = parent.as_ref().is_some_and(|p| same_point(p, &pick.point)) || (pick.shared && pick.as_stated);
        if already_run {
            let novelty = value_after(prompt, "Novelty bias:").unwrap_or(0.0).clamp(0.0, 1.0);
            // points the prompt shows as already run
            let known: Vec<Vec<f64>> = parent
                .iter()
                .cloned()
                .chain(section(prompt, "Candidates").lines().filter_map(parse_target))
                .collect();
            let mut axis = 0;
            let mut p = pick.point.clone();
            for _ in 0..8 {
                axis = rng.random_range(0..pick.point.len());
                p = pick.point.clone();
                p[axis] = (p[axis] + gauss(rng, self.sigma(novelty))).clamp(0.0, 1.0);
                p = Self::quantize(&p);
                if !known.iter().any(|k| same_point(k, &p)) {
                    break;
                }
            }
            format!(
                "```kv\naction: modify\ncandidate: {}\nhypothesis: {}\ncomponent: {}\nproblem: P1\n```\n",
                pick.label,
                Self::set_text(axis, &p),
                axis_component(axis).as_str()
            )
        } else if pick.as_stated && !pick.shared {
            format!("```kv\naction: select\ncandidate: {}\n```\n", pick.label)
        } else {
            let axis = parent
                .as_ref()
                .and_then(|p| p.iter().zip(&pick.point).position(|(a, b)| (a - b).abs() >= 5e-4))
                .unwrap_or(0);
            format!(
                "```kv\naction: modify\ncandidate: {}\nhypothesis: {}\ncomponent: {}\nproblem: P1\n```\n",
                pick.label,
                Self::set_text(axis, &pick.point),
                axis_component(axis).as_str()
            )
        }
    }

    fn cost<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let j = self.world.cfg.cost_jitter;
        self.world.cfg.full_cost_s * (1.0 + rng.random_range(-j..=j))
    }

    fn fresh_bug<R: Rng + ?Sized>(&self, rng: &mut R, prompt: &str) -> bool {
        let first_attempt = section(prompt, "Previous attempt").trim().starts_with("None");
        first_attempt && rng.random_bool(self.world.cfg.bug_rate.clamp(0.0, 1.0))
    }

    fn draft<R: Rng + ?Sized>(&self, rng: &mut R, prompt: &str) -> String {
        let target = parse_target(section(prompt, "Hypothesis"))
            .unwrap_or_else(|| vec![0.5; self.world.dimension()]);
        let bug = self.fresh_bug(rng, prompt);
        Directive {
            params: target,
            cost_s: self.cost(rng),
            bug,
        }
        .render()
    }

    /// Every point taking each coordinate from one of `sources`.
    fn combinations(sources: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let Some(d) = sources.first().map(Vec::len) else {
            return Vec::new();
        };
        let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(d)];
        for axis in 0..d {
            let mut values: Vec<f64> = sources.iter().filter_map(|s| s.get(axis).copied()).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        out
    }

    fn merge<R: Rng + ?Sized>(&self, rng: &mut R, prompt: &str) -> String {
        let mut existing = parse_params_lines(section(prompt, "Main solution"));
        existing.extend(parse_params_lines(section(prompt, "Solutions to merge")));
        existing.retain(|p| p.len() == self.world.dimension());
        let mut options = Self::combinations(&existing);
        options.extend(parse_target(section(prompt, "Hypothesis")));
        let best = options
            .into_iter()
            .map(|p| {
                let e = self.judge(rng, &p);
                (p, e)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(p, _)| p);
        let params = match best {
            Some(p) if existing.iter().any(|e| same_point(e, &p)) => {
                Self::quantize(&self.step(rng, &p, self.world.cfg.step_min))
            }
            Some(p) => p,
            None => vec![0.5; self.world.dimension()],
        };
        let bug = self.fresh_bug(rng, prompt);
        Directive {
            params,
            cost_s: self.cost(rng),
            bug,
        }
        .render()
    }

    fn feedback(&self, prompt: &str) -> String {
        let outcome = section(prompt, "Outcome");
        let supported = outcome.contains("Improved on parent: yes");
        let first = outcome.lines().find(|l| !l.trim().is_empty()).unwrap_or("no outcome");
        format!(
            "```kv\nobservation: {}\nhypothesis_supported: {}\nlesson: {}\n```\n",
            first.trim(),
            if supported { "yes" } else { "no" },
            if supported {
                "Moves in this direction pay off; refine nearby."
            } else {
                "This move did not help; try a different region or a smaller step."
            }
        )
    }

    fn select_sota(&self, prompt: &str) -> String {
        let mut best: Option<(usize, f64)> = None;
        for line in section(prompt, "Experiments").lines() {
            let line = line.trim();
            let Some(idx) = line
                .strip_prefix('[')
                .and_then(|r| r.split(']').next())
                .and_then(|s| s.parse::<usize>().ok())
            else {
                continue;
            };
            let Some(score) = value_after(line, "validation") else {
                continue;
            };
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((idx, score));
            }
        }
        match best {
            Some((idx, _)) => json!({"selected_SOTA_idx": idx, "explanation": "highest validation score"}),
            None => json!({"selected_SOTA_idx": null, "explanation": "no scored experiment"}),
        }
        .to_string()
    }
}

impl PromptBackend for SyntheticBackend {
    fn id(&self) -> &str {
        "synthetic"
    }

    fn complete(&self, req: &PromptRequest) -> Result<PromptResponse, BackendError> {
        let mut rng = rng_for(self.world.cfg.landscape_seed, &req.idempotency_key);
        let prompt = req.rendered_prompt.as_str();
        let text = match req.step_name.as_str() {
            prompts::TASK_ANALYSIS => self.task_analysis(),
            prompts::IDENTIFY_PROBLEMS => self.identify_problems(&mut rng),
            prompts::GENERATE_HYPOTHESES => self.generate(&mut rng, prompt),
            prompts::SELECT_HYPOTHESIS => self.select(&mut rng, prompt),
            prompts::DRAFT => self.draft(&mut rng, prompt),
            prompts::MERGE => self.merge(&mut rng, prompt),
            prompts::FEEDBACK => self.feedback(prompt),
            prompts::SELECT_SOTA => self.select_sota(prompt),
            other => return Err(BackendError::UnknownStep(other.into())),
        };
        Ok(PromptResponse {
            usage: Usage {
                prompt_tokens: approx_tokens(prompt),
                completion_tokens: approx_tokens(&text),
            },
            text,
            latency_ms: self.world.cfg.call_latency_s * 1000.0,
            backend_id: self.id().into(),
        })
    }
}

/// Runs synthetic directives with simulated wall time.
pub struct SyntheticExecutor {
    world: Arc<SyntheticWorld>,
}

impl SyntheticExecutor {
    pub fn new(world: Arc<SyntheticWorld>) -> Self {
        SyntheticExecutor { world }
    }

    fn failure(stderr: String, wall_time_s: f64) -> ExecOutput {
        ExecOutput {
            exit_code: Some(1),
            stdout: String::new(),
            stderr,
            wall_time_s,
            timed_out: false,
        }
    }

    fn timeout(stdout: String, cap_s: f64) -> ExecOutput {
        ExecOutput {
            exit_code: None,
            stdout,
            stderr: String::new(),
            wall_time_s: cap_s,
            timed_out: true,
        }
    }

    fn write_outputs(&self, d: &Directive, ws: &Workspace) -> Result<(), String> {
        let key = format!("{:?}", d.params);
        let accuracy = self.world.value(&d.params);
        let test = ws.input_dir.join("test.csv");
        let sample = ws.input_dir.join("sample_submission.csv");
        let mut reader = csv::Reader::from_path(&test).map_err(|e| format!("FileNotFoundError: {}: {e}", test.display()))?;
        let header: Vec<String> = csv::Reader::from_path(&sample)
            .and_then(|mut r| r.headers().map(|h| h.iter().map(str::to_string).collect()))
            .map_err(|e| format!("FileNotFoundError: {}: {e}", sample.display()))?;
        let [id_col, label_col] = header.as_slice() else {
            return Err(format!("ValueError: unexpected sample submission header {header:?}"));
        };
        let headers = reader.headers().map_err(|e| e.to_string())?.clone();
        let id_idx = headers.iter().position(|h| h == id_col).ok_or("KeyError: id column")?;
        let feature_idx: Vec<usize> = (0..FEATURES)
            .map(|i| headers.iter().position(|h| h == format!("f{i}")).ok_or(format!("KeyError: 'f{i}'")))
            .collect::<Result<_, _>>()?;

        let mut writer = csv::Writer::from_path(ws.output_dir.join("submission.csv")).map_err(|e| e.to_string())?;
        writer.write_record([id_col, label_col]).map_err(|e| e.to_string())?;
        for row in reader.records() {
            let row = row.map_err(|e| e.to_string())?;
            let id = &row[id_idx];
            let features: Vec<f64> = feature_idx
                .iter()
                .map(|i| row[*i].parse::<f64>().map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            let truth = planted_label(&features);
            let u: f64 = rng_for(self.world.cfg.landscape_seed, &format!("row{key}|{id}")).random();
            let pred = if u < accuracy { truth } else { 1 - truth };
            writer.write_record([id, &pred.to_string()]).map_err(|e| e.to_string())?;
        }
        writer.flush().map_err(|e| e.to_string())?;

        let mut rng = rng_for(self.world.cfg.landscape_seed, &format!("score{key}"));
        let score = (accuracy + gauss(&mut rng, self.world.cfg.score_noise)).clamp(0.0, 1.0);
        fs::write(
            ws.output_dir.join("scores.json"),
            json!({"score": score, "metric": "accuracy"}).to_string(),
        )
        .map_err(|e| e.to_string())
    }
}

impl Executor for SyntheticExecutor {
    fn execute(&self, code: &str, ws: &Workspace, mode: RunMode, cap_s: f64) -> Result<ExecOutput, ExecError> {
        let Some(d) = Directive::parse(code) else {
            return Ok(Self::failure(
                "SyntaxError: no synthetic directive block found".into(),
                0.01,
            ));
        };
        if d.params.len() != self.world.dimension() {
            return Ok(Self::failure(
                format!(
                    "ValueError: expected {} parameters, got {}",
                    self.world.dimension(),
                    d.params.len()
                ),
                0.01,
            ));
        }
        let debug_time = 0.1 * d.cost_s;
        let mut rng = rng_for(self.world.cfg.landscape_seed, &format!("estimate{:?}", d.params));
        let estimated = d.cost_s * (1.0 + gauss(&mut rng, 0.05)).max(0.5);
        match mode {
            RunMode::Debug => {
                if debug_time > cap_s {
                    return Ok(Self::timeout("loading data\n".into(), cap_s));
                }
                if d.bug {
                    return Ok(Self::failure(
                        "Traceback (most recent call last):\n  File \"main.py\", line 42, in <module>\n    X = frame[\"f5\"]\nKeyError: 'f5'\n".into(),
                        0.5 * debug_time,
                    ));
                }
                Ok(ExecOutput {
                    exit_code: Some(0),
                    stdout: format!("loading data\ntraining on sample\n{}", format_debug_block(debug_time, estimated)),
                    stderr: String::new(),
                    wall_time_s: debug_time,
                    timed_out: false,
                })
            }
            RunMode::Full => {
                if d.cost_s > cap_s {
                    return Ok(Self::timeout("loading data\ntraining\n".into(), cap_s));
                }
                if d.bug {
                    return Ok(Self::failure("KeyError: 'f5'\n".into(), 0.5 * d.cost_s));
                }
                match self.write_outputs(&d, ws) {
                    Ok(()) => Ok(ExecOutput {
                        exit_code: Some(0),
                        stdout: "loading data\ntraining\nwrote submission.csv\n".into(),
                        stderr: String::new(),
                        wall_time_s: d.cost_s,
                        timed_out: false,
                    }),
                    Err(msg) => Ok(Self::failure(msg, d.cost_s)),
                }
            }
        }
    }
}

/// Writes a self-contained synthetic classification task: `description.md`,
/// `task.json` and `source/train.csv` (`id`, `f0`..`f4`, `label`).
pub fn write_synthetic_task(dir: &Path, rows: usize, seed: u64) -> std::io::Result<()> {
    fs::create_dir_all(dir.join("source"))?;
    fs::write(
        dir.join("description.md"),
        "# Synthetic binary classification\n\n\
         Each row has an integer `id` and five numeric features `f0`..`f4`.\n\
         Predict the binary `label` for every row of `test.csv`.\n\
         Submissions are CSV files with columns `id,label` and are scored by accuracy (higher is better).\n",
    )?;
    let task = json!({
        "id_column": "id",
        "label_column": "label",
        "grader": {"kind": "accuracy"},
        "synthetic": true
    });
    fs::write(dir.join("task.json"), serde_json::to_string_pretty(&task)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = csv::Writer::from_path(dir.join("source").join("train.csv"))?;
    let mut header: Vec<String> = vec!["id".into()];
    header.extend((0..FEATURES).map(|i| format!("f{i}")));
    header.push("label".into());
    w.write_record(&header)?;
    for id in 0..rows {
        let features: Vec<f64> = (0..FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut record = vec![id.to_string()];
        record.extend(features.iter().map(|v| format!("{v:.5}")));
        // labels come from the rounded values so the rule holds on disk
        let rounded: Vec<f64> = record[1..].iter().map(|s| s.parse().expect("number")).collect();
        record.push(planted_label(&rounded).to_string());
        w.write_record(&record)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> Arc<SyntheticWorld> {
        SyntheticWorld::new(SyntheticConfig::default())
    }

    fn req(step: &str, prompt: String, key: &str) -> PromptRequest {
        PromptRequest::new(step, prompt, 0.7, 1000, key.into(), "b0".into()).unwrap()
    }

    #[test]
    fn target_and_params_parsing() {
        assert_eq!(
            parse_target("Shift p0 by +0.1 toward target (0.310, 0.740)"),
            Some(vec![0.31, 0.74])
        );
        assert_eq!(parse_target("no point"), None);
        let d = Directive {
            params: vec![0.25, 0.5],
            cost_s: 3.5,
            bug: true,
        };
        assert_eq!(Directive::parse(&d.render()), Some(d));
    }

    #[test]
    fn section_extraction() {
        let p = "intro\n## A\none\ntwo\n\n## B\nthree\n";
        assert_eq!(section(p, "A"), "one\ntwo\n");
        assert_eq!(section(p, "B"), "three\n");
        assert_eq!(section(p, "C"), "");
    }

    #[test]
    fn responses_are_deterministic_per_key() {
        let b = SyntheticBackend::new(world());
        let prompt = "## Parent solution\nNone\n\nNovelty bias: 1.0\nHypotheses to propose: 3\n".to_string();
        let a1 = b.complete(&req("generate_hypotheses", prompt.clone(), "k1")).unwrap();
        let a2 = b.complete(&req("generate_hypotheses", prompt.clone(), "k1")).unwrap();
        let a3 = b.complete(&req("generate_hypotheses", prompt, "k2")).unwrap();
        assert_eq!(a1.text, a2.text);
        assert_ne!(a1.text, a3.text);
        assert_eq!(a1.text.matches("hypothesis:").count(), 3);
    }

    #[test]
    fn select_prefers_the_better_point() {
        let w = world();
        let opt = format_point(w.landscape.optimum());
        let b = SyntheticBackend::new(w.clone());
        let prompt = format!(
            "## Parent solution\nNone\n\n## Candidates\nC1 (current_branch): Start at target (0.000, 1.000)\nC2 (current_branch): Start at target {opt}\n\nChoose"
        );
        let r = b.complete(&req("select_hypothesis", prompt, "k")).unwrap();
        assert!(r.text.contains("candidate: C2"), "{}", r.text);
    }
}
