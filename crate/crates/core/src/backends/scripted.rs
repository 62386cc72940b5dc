//! Fixture replay and recording.
//!
//! Fixture layout on disk: `<dir>/<step>/<NNNNN>.txt` is the shared stream
//! for a step; `<dir>/<step>/<stream>/<NNNNN>.txt` overrides it for one
//! stream. Files are consumed in name order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{approx_tokens, BackendError, PromptBackend, PromptRequest, PromptResponse, Usage};

const SHARED: &str = "";

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    fixtures: BTreeMap<(String, String), Vec<String>>,
    cursor: Mutex<BTreeMap<(String, String), usize>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a response to the shared stream of `step`.
    pub fn push(&mut self, step: &str, text: impl Into<String>) -> &mut Self {
        self.push_stream(step, SHARED, text)
    }

    pub fn push_stream(&mut self, step: &str, stream: &str, text: impl Into<String>) -> &mut Self {
        self.fixtures
            .entry((step.to_string(), stream.to_string()))
            .or_default()
            .push(text.into());
        self
    }

    pub fn from_dir(dir: &Path) -> Result<Self, BackendError> {
        let io = |e: std::io::Error| BackendError::Io(format!("{}: {e}", dir.display()));
        let mut backend = ScriptedBackend::new();
        if !dir.is_dir() {
            return Err(BackendError::Config(format!(
                "fixture directory {} does not exist",
                dir.display()
            )));
        }
        for step_entry in sorted_entries(dir).map_err(io)? {
            if !step_entry.is_dir() {
                continue;
            }
            let step = file_name(&step_entry);
            for entry in sorted_entries(&step_entry).map_err(io)? {
                if entry.is_dir() {
                    let stream = file_name(&entry);
                    for f in sorted_entries(&entry).map_err(io)? {
                        if f.is_file() {
                            backend.push_stream(&step, &stream, fs::read_to_string(&f).map_err(io)?);
                        }
                    }
                } else if entry.is_file() {
                    backend.push(&step, fs::read_to_string(&entry).map_err(io)?);
                }
            }
        }
        Ok(backend)
    }

    fn key_for(&self, req: &PromptRequest) -> (String, String) {
        let own = (req.step_name.clone(), req.stream.clone());
        if self.fixtures.contains_key(&own) {
            own
        } else {
            (req.step_name.clone(), SHARED.to_string())
        }
    }
}

fn sorted_entries(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    v.sort();
    Ok(v)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl PromptBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &PromptRequest) -> Result<PromptResponse, BackendError> {
        let key = self.key_for(req);
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let index = cursor.entry(key.clone()).or_insert(0);
        let text = self
            .fixtures
            .get(&key)
            .and_then(|list| list.get(*index))
            .cloned()
            .ok_or_else(|| BackendError::FixtureExhausted {
                step: req.step_name.clone(),
                stream: req.stream.clone(),
                index: *index,
            })?;
        *index += 1;
        Ok(PromptResponse {
            usage: Usage {
                prompt_tokens: approx_tokens(&req.rendered_prompt),
                completion_tokens: approx_tokens(&text),
            },
            text,
            latency_ms: 0.0,
            backend_id: self.id().to_string(),
        })
    }

    fn restore_progress(&self, consumed: &BTreeMap<(String, String), usize>) {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        cursor.clear();
        for ((step, stream), n) in consumed {
            let probe = PromptRequest {
                step_name: step.clone(),
                rendered_prompt: String::new(),
                temperature: 0.0,
                max_tokens: 0,
                idempotency_key: String::new(),
                stream: stream.clone(),
            };
            *cursor.entry(self.key_for(&probe)).or_insert(0) += n;
        }
    }
}

/// Wraps a backend and writes every response as a per-stream fixture, so a
/// run can later be replayed by [`ScriptedBackend::from_dir`].
pub struct RecordingBackend<B> {
    inner: B,
    dir: PathBuf,
    counters: Mutex<BTreeMap<(String, String), usize>>,
}

impl<B: PromptBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        RecordingBackend {
            inner,
            dir: dir.into(),
            counters: Mutex::new(BTreeMap::new()),
        }
    }
}

impl<B: PromptBackend> PromptBackend for RecordingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &PromptRequest) -> Result<PromptResponse, BackendError> {
        let resp = self.inner.complete(req)?;
        let index = {
            let mut c = self.counters.lock().expect("counter lock");
            let slot = c
                .entry((req.step_name.clone(), req.stream.clone()))
                .or_insert(0);
            *slot += 1;
            *slot - 1
        };
        let stream = if req.stream.is_empty() { "shared" } else { req.stream.as_str() };
        let dir = self.dir.join(&req.step_name).join(stream);
        fs::create_dir_all(&dir).map_err(|e| BackendError::Io(e.to_string()))?;
        fs::write(dir.join(format!("{index:05}.txt")), &resp.text)
            .map_err(|e| BackendError::Io(e.to_string()))?;
        Ok(resp)
    }

    fn restore_progress(&self, consumed: &BTreeMap<(String, String), usize>) {
        *self.counters.lock().expect("counter lock") = consumed.clone();
        self.inner.restore_progress(consumed);
    }
}
