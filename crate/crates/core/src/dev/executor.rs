//! Sandboxed execution of solution code.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

pub const TAIL_BYTES: usize = 64 * 1024;
pub const DEBUG_FLAG: &str = "--debug";
pub const SUBMISSION_FILE: &str = "submission.csv";

/// Filesystem layout of one solution run. `input_dir` is shared task data
/// and must not be written by solutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workspace {
    pub root: PathBuf,
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub scratch_dir: PathBuf,
}

impl Workspace {
    pub fn create(root: impl Into<PathBuf>, input_dir: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        let ws = Workspace {
            output_dir: root.join("output"),
            scratch_dir: root.join("scratch"),
            input_dir: input_dir.into(),
            root,
        };
        fs::create_dir_all(&ws.output_dir)?;
        fs::create_dir_all(&ws.scratch_dir)?;
        Ok(ws)
    }

    pub fn clear_output(&self) -> io::Result<()> {
        if self.output_dir.exists() {
            fs::remove_dir_all(&self.output_dir)?;
        }
        fs::create_dir_all(&self.output_dir)
    }

    pub fn submission_path(&self) -> PathBuf {
        self.output_dir.join(SUBMISSION_FILE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Debug,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutput {
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub wall_time_s: f64,
    pub timed_out: bool,
}

impl ExecOutput {
    pub fn succeeded(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("failed to start solution: {0}")]
    Spawn(String),
    #[error("workspace io: {0}")]
    Io(String),
}

pub trait Executor: Send + Sync {
    /// Runs `code` in `ws`, killing it once `cap_s` seconds have elapsed.
    /// Crashes and timeouts are reported in the output, not as errors.
    fn execute(&self, code: &str, ws: &Workspace, mode: RunMode, cap_s: f64) -> Result<ExecOutput, ExecError>;
}

/// Runs the entrypoint as a child process with a cleared environment.
///
/// The command template may use `{entrypoint}`, `{input_dir}`,
/// `{output_dir}` and `{scratch_dir}`; `--debug` is appended in debug mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessExecutor {
    pub command: Vec<String>,
    pub entrypoint: String,
    /// Variables copied from the parent environment.
    pub env_whitelist: Vec<String>,
    pub tail_bytes: usize,
}

impl Default for ProcessExecutor {
    fn default() -> Self {
        ProcessExecutor {
            command: vec!["python3".into(), "{entrypoint}".into()],
            entrypoint: "main.py".into(),
            env_whitelist: ["PATH", "HOME", "LANG", "LC_ALL", "PYTHONPATH", "TMPDIR"]
                .map(String::from)
                .to_vec(),
            tail_bytes: TAIL_BYTES,
        }
    }
}

fn expand(arg: &str, entrypoint: &Path, ws: &Workspace) -> String {
    arg.replace("{entrypoint}", &entrypoint.to_string_lossy())
        .replace("{input_dir}", &ws.input_dir.to_string_lossy())
        .replace("{output_dir}", &ws.output_dir.to_string_lossy())
        .replace("{scratch_dir}", &ws.scratch_dir.to_string_lossy())
}

/// Keeps the last `limit` bytes of a stream.
fn tail_reader<R: Read + Send + 'static>(mut src: R, limit: usize) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut kept: Vec<u8> = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match src.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    kept.extend_from_slice(&buf[..n]);
                    if kept.len() > 2 * limit {
                        kept.drain(..kept.len() - limit);
                    }
                }
            }
        }
        if kept.len() > limit {
            kept.drain(..kept.len() - limit);
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

#[cfg(unix)]
fn kill_group(child: &mut std::process::Child) {
    // the child leads its own process group, so this also reaps grandchildren
    unsafe {
        libc::kill(-(child.id() as i32), libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_group(child: &mut std::process::Child) {
    let _ = child.kill();
}

impl Executor for ProcessExecutor {
    fn execute(&self, code: &str, ws: &Workspace, mode: RunMode, cap_s: f64) -> Result<ExecOutput, ExecError> {
        let Some((program, args)) = self.command.split_first() else {
            return Err(ExecError::Spawn("empty command template".into()));
        };
        let entrypoint = ws.root.join(&self.entrypoint);
        fs::write(&entrypoint, code).map_err(|e| ExecError::Io(e.to_string()))?;
        fs::create_dir_all(&ws.output_dir).map_err(|e| ExecError::Io(e.to_string()))?;
        fs::create_dir_all(&ws.scratch_dir).map_err(|e| ExecError::Io(e.to_string()))?;

        let mut cmd = Command::new(expand(program, &entrypoint, ws));
        cmd.args(args.iter().map(|a| expand(a, &entrypoint, ws)));
        if mode == RunMode::Debug {
            cmd.arg(DEBUG_FLAG);
        }
        cmd.current_dir(&ws.root)
            .env_clear()
            .envs(self.env_whitelist.iter().filter_map(|k| std::env::var(k).ok().map(|v| (k, v))))
            .env("INPUT_DIR", &ws.input_dir)
            .env("OUTPUT_DIR", &ws.output_dir)
            .env("SCRATCH_DIR", &ws.scratch_dir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| ExecError::Spawn(format!("{program}: {e}")))?;
        let out = tail_reader(child.stdout.take().expect("piped stdout"), self.tail_bytes);
        let err = tail_reader(child.stderr.take().expect("piped stderr"), self.tail_bytes);

        let cap = Duration::from_secs_f64(cap_s.max(0.0));
        let (exit_code, timed_out) = match child.wait_timeout(cap).map_err(|e| ExecError::Io(e.to_string()))? {
            Some(status) => (status.code(), false),
            None => {
                kill_group(&mut child);
                let _ = child.wait();
                (None, true)
            }
        };
        let wall_time_s = started.elapsed().as_secs_f64();
        Ok(ExecOutput {
            exit_code,
            stdout: out.join().unwrap_or_default(),
            stderr: err.join().unwrap_or_default(),
            wall_time_s,
            timed_out,
        })
    }
}
