//! Completion providers for query synthesis.
//!
//! [`HttpCompletionProvider`] speaks the chat-completions JSON protocol:
//!
//! Request (POST `{base_url}/chat/completions`, bearer token from the
//! environment variable named in the config):
//!
//! ```json
//! {
//!   "model": "<model>",
//!   "messages": [{"role": "user", "content": "<prompt>"}],
//!   "temperature": 0.7,
//!   "max_tokens": 1024
//! }
//! ```
//!
//! Response (only the first choice is read):
//!
//! ```json
//! {"choices": [{"message": {"role": "assistant", "content": "<text>"}}]}
//! ```
//!
//! [`ScriptedProvider`] replays completions from a file keyed by chunk
//! index, which keeps synthesis tests deterministic and offline.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ChunkIndex;

/// Typed provider failure. Transport errors are retryable; protocol errors
/// (malformed response, missing scripted entry) are not.
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

/// Something that can turn a synthesis prompt into a completion.
pub trait CompletionProvider: Sync {
    fn complete(&self, chunk: ChunkIndex, prompt: &str) -> Result<String, ProviderError>;
}

/// Endpoint settings for [`HttpCompletionProvider`]. The credential is read
/// from the environment variable named by `api_key_env` at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> usize {
    2
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> usize {
    1024
}

#[derive(Debug, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage<'a>>,
    pub temperature: f64,
    pub max_tokens: usize,
}

#[derive(Debug, Deserialize)]
pub struct ChatResponseMessage {
    pub content: String,
}

#[derive(Debug, Deserialize)]
pub struct ChatChoice {
    pub message: ChatResponseMessage,
}

#[derive(Debug, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

pub struct HttpCompletionProvider {
    config: ProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpCompletionProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn attempt(&self, prompt: &str) -> Result<String, ProviderError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = ChatRequest {
            model: &self.config.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ProviderError::Transport(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Protocol(format!("status {status}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| ProviderError::Protocol(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::Protocol("empty choices".into()))
    }
}

impl CompletionProvider for HttpCompletionProvider {
    fn complete(&self, _chunk: ChunkIndex, prompt: &str) -> Result<String, ProviderError> {
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err(err) if err.is_retryable() && attempt < self.config.max_retries => {
                    std::thread::sleep(Duration::from_millis(200 * (attempt as u64 + 1)));
                    last = Some(err);
                }
                Err(err) => return Err(err),
            }
        }
        Err(last.unwrap_or_else(|| ProviderError::Transport("exhausted retries".into())))
    }
}

/// Scripted completion record: `{"chunk_index": N, "completion": "..."}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedCompletion {
    pub chunk_index: ChunkIndex,
    pub completion: String,
}

/// Offline provider replaying completions from a script file (one JSON
/// object per line, see [`ScriptedCompletion`]).
pub struct ScriptedProvider {
    completions: HashMap<ChunkIndex, String>,
}

impl ScriptedProvider {
    pub fn from_records(records: Vec<ScriptedCompletion>) -> Self {
        Self {
            completions: records
                .into_iter()
                .map(|r| (r.chunk_index, r.completion))
                .collect(),
        }
    }

    pub fn from_path(path: &Path) -> crate::error::Result<Self> {
        Ok(Self::from_records(crate::io::read_jsonl(path)?))
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, chunk: ChunkIndex, _prompt: &str) -> Result<String, ProviderError> {
        self.completions
            .get(&chunk)
            .cloned()
            .ok_or_else(|| ProviderError::Protocol(format!("no scripted completion for chunk {chunk}")))
    }
}
