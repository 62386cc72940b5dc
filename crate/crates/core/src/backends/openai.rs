//! OpenAI-compatible chat-completions and embeddings client.
//!
//! HTTP goes through [`HttpTransport`] so retry and idempotency behaviour
//! can be exercised with an in-memory double; [`UreqTransport`] is the
//! production implementation.

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, Embedder, PromptBackend, PromptRequest, PromptResponse, Usage};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, BackendError>;
}

#[derive(Debug, Default)]
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        match req.send(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let body = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| BackendError::Transport(e.to_string()))?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Timeout(_)) => Err(BackendError::Timeout),
            Err(e) => Err(BackendError::Transport(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenAiConfig {
    pub base_url: String,
    /// Model for research steps (analysis, problems, hypotheses, selection, feedback).
    pub research_model: String,
    /// Model for development steps (draft, merge).
    pub dev_model: String,
    pub embedding_model: String,
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        OpenAiConfig {
            base_url: "https://api.openai.com/v1".into(),
            research_model: "gpt-4.1".into(),
            dev_model: "gpt-4.1".into(),
            embedding_model: "text-embedding-3-small".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_s: 120.0,
            max_retries: 3,
            backoff_base_ms: 500,
        }
    }
}

struct Client<T> {
    cfg: OpenAiConfig,
    api_key: String,
    transport: T,
}

fn api_key_from_env(cfg: &OpenAiConfig) -> Result<String, BackendError> {
    std::env::var(&cfg.api_key_env)
        .map_err(|_| BackendError::Config(format!("environment variable {} is not set", cfg.api_key_env)))
}

impl<T: HttpTransport> Client<T> {
    fn new(cfg: OpenAiConfig, api_key: String, transport: T) -> Self {
        Client { cfg, api_key, transport }
    }

    /// POSTs with exponential backoff on transient failures. The same
    /// idempotency key is sent on every attempt.
    fn post(&self, path: &str, body: &Value, idempotency_key: &str) -> Result<Value, BackendError> {
        let url = format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path);
        let headers = vec![
            ("Authorization".to_string(), format!("Bearer {}", self.api_key)),
            ("Idempotency-Key".to_string(), idempotency_key.to_string()),
        ];
        let payload = body.to_string();
        let timeout = Duration::from_secs_f64(self.cfg.timeout_s);
        let mut attempt = 0;
        loop {
            let outcome = self
                .transport
                .post_json(&url, &headers, &payload, timeout)
                .and_then(|resp| match resp.status {
                    200..=299 => serde_json::from_str::<Value>(&resp.body)
                        .map_err(|e| BackendError::InvalidResponse(e.to_string())),
                    429 => Err(BackendError::RateLimited),
                    status => Err(BackendError::Http {
                        status,
                        body: resp.body.chars().take(2000).collect(),
                    }),
                });
            match outcome {
                Err(e) if e.is_transient() && attempt < self.cfg.max_retries => {
                    tracing::warn!(error = %e, attempt, "retrying backend call");
                    thread::sleep(Duration::from_millis(self.cfg.backoff_base_ms << attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

pub struct OpenAiBackend<T = UreqTransport> {
    client: Client<T>,
    id: String,
}

impl OpenAiBackend<UreqTransport> {
    pub fn from_env(cfg: OpenAiConfig) -> Result<Self, BackendError> {
        let key = api_key_from_env(&cfg)?;
        Ok(Self::with_transport(cfg, key, UreqTransport))
    }
}

impl<T: HttpTransport> OpenAiBackend<T> {
    pub fn with_transport(cfg: OpenAiConfig, api_key: String, transport: T) -> Self {
        let id = format!("openai:{}|{}", cfg.research_model, cfg.dev_model);
        OpenAiBackend {
            client: Client::new(cfg, api_key, transport),
            id,
        }
    }

    pub fn transport(&self) -> &T {
        &self.client.transport
    }
}

impl<T: HttpTransport> PromptBackend for OpenAiBackend<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &PromptRequest) -> Result<PromptResponse, BackendError> {
        let cfg = &self.client.cfg;
        let model = if prompts::is_development_step(&req.step_name) {
            &cfg.dev_model
        } else {
            &cfg.research_model
        };
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": req.rendered_prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let started = Instant::now();
        let value = self.client.post("chat/completions", &body, &req.idempotency_key)?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::InvalidResponse("missing choices[0].message.content".into()))?
            .to_string();
        let count = |key: &str| value.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
        Ok(PromptResponse {
            text,
            usage: Usage {
                prompt_tokens: count("prompt_tokens"),
                completion_tokens: count("completion_tokens"),
            },
            latency_ms,
            backend_id: self.id.clone(),
        })
    }
}

pub struct OpenAiEmbedder<T = UreqTransport> {
    client: Client<T>,
    dimension: usize,
}

impl OpenAiEmbedder<UreqTransport> {
    pub fn from_env(cfg: OpenAiConfig, dimension: usize) -> Result<Self, BackendError> {
        let key = api_key_from_env(&cfg)?;
        Ok(Self::with_transport(cfg, key, UreqTransport, dimension))
    }
}

impl<T: HttpTransport> OpenAiEmbedder<T> {
    pub fn with_transport(cfg: OpenAiConfig, api_key: String, transport: T, dimension: usize) -> Self {
        OpenAiEmbedder {
            client: Client::new(cfg, api_key, transport),
            dimension,
        }
    }
}

impl<T: HttpTransport> Embedder for OpenAiEmbedder<T> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyText);
        }
        let body = json!({
            "model": self.client.cfg.embedding_model,
            "input": text,
            "dimensions": self.dimension,
        });
        let key = format!("embed-{:016x}", super::embed::fnv1a64(text.as_bytes()));
        let value = self.client.post("embeddings", &body, &key)?;
        let vector: Vec<f64> = value
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::InvalidResponse("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| BackendError::InvalidResponse("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        if vector.len() != self.dimension {
            return Err(BackendError::DimensionMismatch {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        Ok(vector)
    }
}
