//! Prompt calls made on behalf of one loop: rendering, temperatures,
//! deterministic idempotency keys and a record of every exchange.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, PromptBackend, PromptRequest, PromptResponse, Usage};
use crate::prompts::{self, PromptError, PromptLibrary, Vars};

#[derive(Debug, Error)]
pub enum CallError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CallSettings {
    pub research_temperature: f64,
    pub dev_temperature: f64,
    pub max_tokens: u32,
}

impl Default for CallSettings {
    fn default() -> Self {
        CallSettings {
            research_temperature: 0.7,
            dev_temperature: 0.2,
            max_tokens: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub step: String,
    pub stream: String,
    pub idempotency_key: String,
    pub backend_id: String,
    pub usage: Usage,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Session<'a> {
    backend: &'a dyn PromptBackend,
    prompts: &'a PromptLibrary,
    settings: &'a CallSettings,
    key_prefix: String,
    stream: String,
    counters: Mutex<BTreeMap<String, usize>>,
    records: Mutex<Vec<CallRecord>>,
}

impl<'a> Session<'a> {
    /// `key_prefix` must identify the loop uniquely within the run (for
    /// example run seed plus node id) so replayed runs reuse the same keys.
    pub fn new(
        backend: &'a dyn PromptBackend,
        prompts: &'a PromptLibrary,
        settings: &'a CallSettings,
        key_prefix: impl Into<String>,
        stream: impl Into<String>,
    ) -> Self {
        Session {
            backend,
            prompts,
            settings,
            key_prefix: key_prefix.into(),
            stream: stream.into(),
            counters: Mutex::new(BTreeMap::new()),
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    pub fn call(&self, step: &str, vars: &Vars) -> Result<PromptResponse, CallError> {
        let rendered = self.prompts.render(step, vars)?;
        let n = {
            let mut c = self.counters.lock().expect("counter lock");
            let slot = c.entry(step.to_string()).or_insert(0);
            *slot += 1;
            *slot
        };
        let temperature = if prompts::is_development_step(step) {
            self.settings.dev_temperature
        } else {
            self.settings.research_temperature
        };
        let key = format!("{}-{}-{}", self.key_prefix, step, n);
        let req = PromptRequest::new(
            step,
            rendered,
            temperature,
            self.settings.max_tokens,
            key.clone(),
            self.stream.clone(),
        )?;
        let result = self.backend.complete(&req);
        let record = match &result {
            Ok(r) => CallRecord {
                step: step.into(),
                stream: self.stream.clone(),
                idempotency_key: key,
                backend_id: r.backend_id.clone(),
                usage: r.usage,
                latency_ms: r.latency_ms,
                error: None,
            },
            Err(e) => CallRecord {
                step: step.into(),
                stream: self.stream.clone(),
                idempotency_key: key,
                backend_id: self.backend.id().into(),
                usage: Usage::default(),
                latency_ms: 0.0,
                error: Some(e.to_string()),
            },
        };
        self.records.lock().expect("record lock").push(record);
        Ok(result?)
    }

    pub fn take_records(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.records.lock().expect("record lock"))
    }

    /// Sum of reported latencies so far, in seconds.
    pub fn latency_s(&self) -> f64 {
        self.records
            .lock()
            .expect("record lock")
            .iter()
            .map(|r| r.latency_ms / 1000.0)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedBackend;

    #[test]
    fn keys_are_deterministic_and_records_kept() {
        let mut b = ScriptedBackend::new();
        b.push("select_sota", "one").push("select_sota", "two");
        let lib = PromptLibrary::default();
        let settings = CallSettings::default();
        let s = Session::new(&b, &lib, &settings, "s1-n4", "b2");
        let mut vars = Vars::new();
        vars.insert("task_summary", "t".into());
        vars.insert("experiments", "[0] x".into());
        assert_eq!(s.call("select_sota", &vars).unwrap().text, "one");
        assert_eq!(s.call("select_sota", &vars).unwrap().text, "two");
        assert!(s.call("select_sota", &vars).is_err());
        let records = s.take_records();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].idempotency_key, "s1-n4-select_sota-1");
        assert_eq!(records[1].idempotency_key, "s1-n4-select_sota-2");
        assert!(records[2].error.is_some());
        assert!(records.iter().all(|r| r.stream == "b2"));
    }
}
