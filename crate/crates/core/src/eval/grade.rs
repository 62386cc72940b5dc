//! Grading contract: one JSON object `{"score": <real>, "metric": <text>}`.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use wait_timeout::ChildExt;

use super::split::{SplitManifest, LABEL_FILE};
use super::EvalError;
use crate::dev::executor::SUBMISSION_FILE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeResult {
    pub score: f64,
    pub metric: String,
}

/// Strict parse of grader stdout. Surrounding whitespace is allowed, any
/// other text is not. Extra keys are ignored.
pub fn parse_grade_output(stdout: &str, expected_metric: &str) -> Result<GradeResult, EvalError> {
    let bad = |why: String| EvalError::MalformedGradeOutput(why);
    let value: Value = serde_json::from_str(stdout.trim())
        .map_err(|e| bad(format!("not a single JSON object ({e}): {:?}", truncate(stdout, 200))))?;
    let obj = value.as_object().ok_or_else(|| bad("top-level value is not an object".into()))?;
    let score = obj
        .get("score")
        .and_then(Value::as_f64)
        .filter(|s| s.is_finite())
        .ok_or_else(|| bad("\"score\" must be a finite number".into()))?;
    let metric = obj
        .get("metric")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("\"metric\" must be a string".into()))?;
    if !metric.eq_ignore_ascii_case(expected_metric) {
        return Err(bad(format!("metric {metric:?} does not match task metric {expected_metric:?}")));
    }
    Ok(GradeResult {
        score,
        metric: metric.to_string(),
    })
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

pub trait Grader: Send + Sync {
    fn grade(&self, submission: &Path, manifest: &SplitManifest) -> Result<GradeResult, EvalError>;
}

/// In-process accuracy against `label.csv`. Labels compare numerically when
/// both sides parse as numbers, textually otherwise. Ids absent from the
/// submission count as wrong.
#[derive(Debug, Clone)]
pub struct AccuracyGrader {
    pub metric: String,
}

impl Default for AccuracyGrader {
    fn default() -> Self {
        AccuracyGrader {
            metric: "accuracy".into(),
        }
    }
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    r.records()
        .map(|row| {
            let row = row.map_err(|e| format!("{}: {e}", path.display()))?;
            match (row.get(0), row.get(1)) {
                (Some(id), Some(v)) => Ok((id.trim().to_string(), v.trim().to_string())),
                _ => Err(format!("{}: expected two columns", path.display())),
            }
        })
        .collect()
}

pub fn labels_match(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

impl Grader for AccuracyGrader {
    fn grade(&self, submission: &Path, manifest: &SplitManifest) -> Result<GradeResult, EvalError> {
        let truth = read_pairs(&manifest.label_file).map_err(EvalError::GraderCrash)?;
        let preds: HashMap<String, String> = read_pairs(submission)
            .map_err(EvalError::GraderCrash)?
            .into_iter()
            .collect();
        if truth.is_empty() {
            return Err(EvalError::GraderCrash("label file has no rows".into()));
        }
        let correct = truth
            .iter()
            .filter(|(id, label)| preds.get(id).is_some_and(|p| labels_match(p, label)))
            .count();
        Ok(GradeResult {
            score: correct as f64 / truth.len() as f64,
            metric: self.metric.clone(),
        })
    }
}

/// Runs an external grading command in a fresh directory containing copies
/// of `label.csv` and `submission.csv`; its stdout must be one grade object.
#[derive(Debug, Clone)]
pub struct CommandGrader {
    pub command: Vec<String>,
    pub metric: String,
    /// Directory of the task, exposed to the command as `TASK_DIR`.
    pub task_dir: PathBuf,
    /// Parent for the per-invocation grading directories.
    pub work_root: PathBuf,
    pub timeout_s: f64,
}

impl Grader for CommandGrader {
    fn grade(&self, submission: &Path, manifest: &SplitManifest) -> Result<GradeResult, EvalError> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| EvalError::Config("grader command is empty".into()))?;
        let io = |e: std::io::Error| EvalError::GraderCrash(e.to_string());
        fs::create_dir_all(&self.work_root).map_err(io)?;
        let dir = tempfile::Builder::new()
            .prefix("grade-")
            .tempdir_in(&self.work_root)
            .map_err(io)?;
        fs::copy(&manifest.label_file, dir.path().join(LABEL_FILE)).map_err(io)?;
        fs::copy(submission, dir.path().join(SUBMISSION_FILE)).map_err(io)?;

        let mut child = Command::new(program)
            .args(args)
            .current_dir(dir.path())
            .env("TASK_DIR", &self.task_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| EvalError::GraderCrash(format!("cannot start {program:?}: {e}")))?;
        let drain = |mut pipe: Box<dyn Read + Send>| {
            thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = pipe.read_to_end(&mut buf);
                String::from_utf8_lossy(&buf).into_owned()
            })
        };
        let out = drain(Box::new(child.stdout.take().expect("piped stdout")));
        let err = drain(Box::new(child.stderr.take().expect("piped stderr")));
        let status = match child.wait_timeout(Duration::from_secs_f64(self.timeout_s)).map_err(io)? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(EvalError::GraderCrash(format!("grader timed out after {}s", self.timeout_s)));
            }
        };
        let stdout = out.join().unwrap_or_default();
        let stderr = err.join().unwrap_or_default();
        if !status.success() {
            return Err(EvalError::GraderCrash(format!(
                "grader exited with {status}: {}",
                truncate(stderr.trim(), 2000)
            )));
        }
        parse_grade_output(&stdout, &self.metric)
    }
}
