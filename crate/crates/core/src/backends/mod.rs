//! Prompt and embedding backends.
//!
//! * [`openai::OpenAiBackend`] speaks the OpenAI-compatible chat-completions
//!   protocol over a pluggable HTTP transport.
//! * [`scripted::ScriptedBackend`] replays fixtures keyed by step, stream
//!   and call index.
//! * [`synthetic::SyntheticBackend`] plays the role of a model on a seeded
//!   landscape so whole runs can happen offline.

pub mod embed;
pub mod landscape;
pub mod openai;
pub mod scripted;
pub mod synthetic;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts;

pub use embed::HashedEmbedder;
pub use landscape::{Landscape, LandscapeConfig, LandscapeState};
pub use openai::{HttpResponse, HttpTransport, OpenAiBackend, OpenAiConfig, OpenAiEmbedder, UreqTransport};
pub use scripted::{RecordingBackend, ScriptedBackend};
pub use synthetic::{SyntheticBackend, SyntheticConfig, SyntheticExecutor, SyntheticWorld};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend call timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited,
    #[error("no fixture left for step {step:?} stream {stream:?} (call {index})")]
    FixtureExhausted {
        step: String,
        stream: String,
        index: usize,
    },
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("unknown pipeline step {0:?}")]
    UnknownStep(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("fixture io: {0}")]
    Io(String),
}

impl BackendError {
    /// Failures worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::RateLimited | BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub step_name: String,
    pub rendered_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub idempotency_key: String,
    /// Replay stream; one per branch so concurrent workers replay deterministically.
    pub stream: String,
}

impl PromptRequest {
    pub fn new(
        step_name: &str,
        rendered_prompt: String,
        temperature: f64,
        max_tokens: u32,
        idempotency_key: String,
        stream: String,
    ) -> Result<Self, BackendError> {
        if !prompts::is_known_step(step_name) {
            return Err(BackendError::UnknownStep(step_name.into()));
        }
        Ok(PromptRequest {
            step_name: step_name.into(),
            rendered_prompt,
            temperature,
            max_tokens,
            idempotency_key,
            stream,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: f64,
    pub backend_id: String,
}

pub trait PromptBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, BackendError>;

    /// Fast-forwards replay state after a resume; `consumed` maps
    /// (step, stream) to the number of calls already answered.
    fn restore_progress(&self, _consumed: &BTreeMap<(String, String), usize>) {}
}

impl<B: PromptBackend + ?Sized> PromptBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &PromptRequest) -> Result<PromptResponse, BackendError> {
        (**self).complete(request)
    }

    fn restore_progress(&self, consumed: &BTreeMap<(String, String), usize>) {
        (**self).restore_progress(consumed)
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

/// Running token totals across all calls of a run.
#[derive(Debug, Default)]
pub struct UsageLedger {
    inner: Mutex<LedgerTotals>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageLedger {
    pub fn record(&self, usage: Usage) {
        let mut t = self.inner.lock().expect("ledger lock");
        t.calls += 1;
        t.prompt_tokens += usage.prompt_tokens;
        t.completion_tokens += usage.completion_tokens;
    }

    pub fn totals(&self) -> LedgerTotals {
        *self.inner.lock().expect("ledger lock")
    }
}

/// Rough token count for backends that do not report usage.
pub(crate) fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
