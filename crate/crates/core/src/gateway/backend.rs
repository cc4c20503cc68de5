//! Chat-completion backends: a live HTTPS endpoint and a deterministic
//! scripted backend driven by trace files.
//!
//! Trace format: JSONL, one entry per expected call,
//! `{"template_id": ..., "ordinal": n, "response_text": ..., "input_tokens": n, "output_tokens": n}`.
//! Entries are keyed by `(template_id, ordinal)` — the n-th call rendered
//! from a template consumes ordinal n, regardless of prompt content, so
//! prompts may embed timestamps without breaking replay.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::template::TemplateId;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend timeout after {0:?}")]
    Timeout(Duration),
    #[error("backend http error: {0}")]
    Http(String),
    #[error("backend response missing field {0}")]
    MalformedResponse(&'static str),
    #[error("trace has no entry for template {template} ordinal {ordinal}")]
    TraceMiss { template: TemplateId, ordinal: u32 },
    #[error("trace {path} line {line}: {message}")]
    TraceParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("trace {path}: template {template} ordinals not contiguous from 0")]
    TraceOrdinals { path: String, template: TemplateId },
    #[error("api key env var {0} not set")]
    MissingApiKey(String),
}

/// One request to a backend.
#[derive(Debug, Clone)]
pub struct CallSpec {
    pub template: TemplateId,
    pub agent_id: String,
    pub model: String,
    pub prompt: String,
}

/// One response from a backend.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub wall_ms: u64,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, call: &CallSpec) -> Result<BackendReply, BackendError>;
    /// True when replies are a pure function of the call sequence.
    fn is_deterministic(&self) -> bool;
}

/// One line of a scripted trace file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub template_id: TemplateId,
    pub ordinal: u32,
    pub response_text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(default)]
    pub wall_ms: u64,
}

/// Replays recorded responses keyed by `(template_id, ordinal)`.
#[derive(Debug)]
pub struct ScriptedBackend {
    streams: Mutex<HashMap<TemplateId, Stream>>,
}

#[derive(Debug)]
struct Stream {
    entries: Vec<TraceEntry>,
    cursor: usize,
}

impl ScriptedBackend {
    pub fn from_entries(entries: Vec<TraceEntry>) -> Result<Self, BackendError> {
        Self::build(entries, "<memory>")
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path).map_err(|e| BackendError::TraceParse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TraceEntry =
                serde_json::from_str(line).map_err(|e| BackendError::TraceParse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        Self::build(entries, &path.display().to_string())
    }

    fn build(entries: Vec<TraceEntry>, path: &str) -> Result<Self, BackendError> {
        let mut streams: HashMap<TemplateId, Stream> = HashMap::new();
        for entry in entries {
            streams
                .entry(entry.template_id)
                .or_insert_with(|| Stream {
                    entries: Vec::new(),
                    cursor: 0,
                })
                .entries
                .push(entry);
        }
        for (template, stream) in &mut streams {
            stream.entries.sort_by_key(|e| e.ordinal);
            for (i, entry) in stream.entries.iter().enumerate() {
                if entry.ordinal as usize != i {
                    return Err(BackendError::TraceOrdinals {
                        path: path.to_string(),
                        template: *template,
                    });
                }
            }
        }
        Ok(ScriptedBackend {
            streams: Mutex::new(streams),
        })
    }

    /// Entries not yet consumed, for post-run trace coverage checks.
    pub fn remaining(&self) -> usize {
        let streams = self.streams.lock().expect("scripted backend poisoned");
        streams.values().map(|s| s.entries.len() - s.cursor).sum()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, call: &CallSpec) -> Result<BackendReply, BackendError> {
        let mut streams = self.streams.lock().expect("scripted backend poisoned");
        let stream = streams
            .get_mut(&call.template)
            .ok_or(BackendError::TraceMiss {
                template: call.template,
                ordinal: 0,
            })?;
        let entry = stream
            .entries
            .get(stream.cursor)
            .ok_or(BackendError::TraceMiss {
                template: call.template,
                ordinal: stream.cursor as u32,
            })?;
        stream.cursor += 1;
        Ok(BackendReply {
            text: entry.response_text.clone(),
            input_tokens: entry.input_tokens,
            output_tokens: entry.output_tokens,
            wall_ms: entry.wall_ms,
        })
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Settings for the live HTTPS chat-completion endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiveBackendConfig {
    pub base_url: String,
    /// Env var holding the bearer token.
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

/// OpenAI-compatible chat-completions client.
pub struct LiveBackend {
    config: LiveBackendConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(config: LiveBackendConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| BackendError::MissingApiKey(config.api_key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Http(e.to_string()))?;
        Ok(LiveBackend {
            config,
            api_key,
            client,
        })
    }
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for LiveBackend {
    fn complete(&self, call: &CallSpec) -> Result<BackendReply, BackendError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let mut body = serde_json::json!({
            "model": call.model,
            "messages": [{"role": "user", "content": call.prompt}],
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = serde_json::json!(t);
        }
        let started = Instant::now();
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    BackendError::Timeout(Duration::from_secs(self.config.timeout_secs))
                } else {
                    BackendError::Http(e.to_string())
                }
            })?;
        let wall_ms = started.elapsed().as_millis() as u64;
        if !response.status().is_success() {
            return Err(BackendError::Http(format!(
                "status {} from {url}",
                response.status()
            )));
        }
        let parsed: ChatCompletionResponse = response
            .json()
            .map_err(|e| BackendError::Http(e.to_string()))?;
        let choice = parsed.choices.into_iter().next();
        let text = choice
            .map(|c| c.message.content)
            .ok_or(BackendError::MalformedResponse("choices"))?;
        // Token counts come from the provider's usage report; no local tokenizer.
        let usage = parsed.usage.unwrap_or(ChatUsage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(BackendReply {
            text,
            input_tokens: usage.prompt_tokens,
            output_tokens: usage.completion_tokens,
            wall_ms,
        })
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(template: TemplateId, ordinal: u32, text: &str) -> TraceEntry {
        TraceEntry {
            template_id: template,
            ordinal,
            response_text: text.into(),
            input_tokens: 10,
            output_tokens: 5,
            wall_ms: 0,
        }
    }

    fn call(template: TemplateId) -> CallSpec {
        CallSpec {
            template,
            agent_id: template.agent_id().into(),
            model: "test".into(),
            prompt: "p".into(),
        }
    }

    #[test]
    fn scripted_replay_is_ordered_per_template() {
        let backend = ScriptedBackend::from_entries(vec![
            entry(TemplateId::SummarySystem, 1, "second"),
            entry(TemplateId::SummarySystem, 0, "first"),
            entry(TemplateId::ClusteringSystem, 0, "[]"),
        ])
        .unwrap();
        assert_eq!(
            backend
                .complete(&call(TemplateId::SummarySystem))
                .unwrap()
                .text,
            "first"
        );
        assert_eq!(
            backend
                .complete(&call(TemplateId::ClusteringSystem))
                .unwrap()
                .text,
            "[]"
        );
        assert_eq!(
            backend
                .complete(&call(TemplateId::SummarySystem))
                .unwrap()
                .text,
            "second"
        );
        assert_eq!(backend.remaining(), 0);
    }

    #[test]
    fn trace_miss_when_exhausted() {
        let backend =
            ScriptedBackend::from_entries(vec![entry(TemplateId::SummarySystem, 0, "only")])
                .unwrap();
        backend.complete(&call(TemplateId::SummarySystem)).unwrap();
        let err = backend
            .complete(&call(TemplateId::SummarySystem))
            .unwrap_err();
        assert!(matches!(err, BackendError::TraceMiss { ordinal: 1, .. }));
        let err = backend
            .complete(&call(TemplateId::KeywordSystem))
            .unwrap_err();
        assert!(matches!(err, BackendError::TraceMiss { ordinal: 0, .. }));
    }

    #[test]
    fn non_contiguous_ordinals_rejected() {
        let err = ScriptedBackend::from_entries(vec![
            entry(TemplateId::SummarySystem, 0, "a"),
            entry(TemplateId::SummarySystem, 2, "b"),
        ])
        .unwrap_err();
        assert!(matches!(err, BackendError::TraceOrdinals { .. }));
    }
}
