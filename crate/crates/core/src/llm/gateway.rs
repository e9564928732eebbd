use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompt::PromptKind;
use super::transcript::{Transcript, TranscriptStore};
use crate::pool::Semaphore;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(&'static str),
    #[error("no transcript recorded for request {0}")]
    ReplayMiss(String),
    #[error("transport failed after {retries} retries: {message}")]
    Transport { retries: u32, message: String },
    #[error("gateway mode {0:?} needs a chat backend")]
    NoBackend(GatewayMode),
    #[error("transcript store: {0}")]
    Store(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_kind: PromptKind,
    pub rendered_prompt: String,
    pub temperature: f64,
    pub attempt: u32,
}

impl GenerationRequest {
    pub fn new(kind: PromptKind, prompt: String, attempt: u32) -> Result<Self, GatewayError> {
        Self::with_temperature(kind, prompt, DEFAULT_TEMPERATURE, attempt)
    }

    pub fn with_temperature(kind: PromptKind, prompt: String, temperature: f64, attempt: u32) -> Result<Self, GatewayError> {
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest("temperature must be a finite value >= 0"));
        }
        if attempt == 0 {
            return Err(GatewayError::InvalidRequest("attempt starts at 1"));
        }
        if prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("rendered prompt is empty"));
        }
        Ok(Self { prompt_kind: kind, rendered_prompt: prompt, temperature, attempt })
    }

    /// Digest of the canonical request encoding. Fields are length-prefixed,
    /// so distinct requests never share an encoding.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"oh-request-v1\0");
        for field in [
            self.prompt_kind.as_str().as_bytes(),
            &self.temperature.to_bits().to_be_bytes(),
            &self.attempt.to_be_bytes(),
            self.rendered_prompt.as_bytes(),
        ] {
            h.update((field.len() as u64).to_be_bytes());
            h.update(field);
        }
        hex::encode(h.finalize())
    }
}

/// Something that turns a request into model text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<String, String>;
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug, Clone)]
pub struct OpenAiBackend {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl OpenAiBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            model: model.into(),
            timeout: Duration::from_secs(300),
        }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

impl ChatBackend for OpenAiBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<String, String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": request.temperature,
        });
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent
            .post(&self.url())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| "response has no message content".to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, initial_delay: Duration::from_secs(1) }
    }
}

pub struct Gateway {
    mode: GatewayMode,
    backend: Option<Arc<dyn ChatBackend>>,
    store: Option<TranscriptStore>,
    retry: RetryPolicy,
    model_tag: String,
    inflight: Semaphore,
    calls: AtomicUsize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("mode", &self.mode).field("model_tag", &self.model_tag).finish()
    }
}

impl Gateway {
    fn build(mode: GatewayMode, backend: Option<Arc<dyn ChatBackend>>, store: Option<TranscriptStore>, model_tag: String) -> Self {
        Self {
            mode,
            backend,
            store,
            retry: RetryPolicy::default(),
            model_tag,
            inflight: Semaphore::new(4),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn live(backend: Arc<dyn ChatBackend>, model_tag: impl Into<String>) -> Self {
        Self::build(GatewayMode::Live, Some(backend), None, model_tag.into())
    }

    pub fn record(backend: Arc<dyn ChatBackend>, store: TranscriptStore, model_tag: impl Into<String>) -> Self {
        Self::build(GatewayMode::Record, Some(backend), Some(store), model_tag.into())
    }

    pub fn replay(store: TranscriptStore) -> Self {
        Self::build(GatewayMode::Replay, None, Some(store), "replay".into())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_inflight(mut self, n: usize) -> Self {
        self.inflight = Semaphore::new(n);
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    /// Number of `complete` calls made so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn store(&self) -> Option<&TranscriptStore> {
        self.store.as_ref()
    }

    fn call_backend(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let backend = self.backend.as_ref().ok_or(GatewayError::NoBackend(self.mode))?;
        let _slot = self.inflight.acquire();
        let mut delay = self.retry.initial_delay;
        let mut last = String::new();
        for attempt in 0..=self.retry.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match backend.complete(request) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("chat backend failed (try {}): {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(GatewayError::Transport { retries: self.retry.retries, message: last })
    }

    pub fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = request.hash();
        match self.mode {
            GatewayMode::Live => self.call_backend(request),
            GatewayMode::Replay => {
                let store = self.store.as_ref().ok_or(GatewayError::ReplayMiss(hash.clone()))?;
                store.get(&hash).map(|t| t.response_text).ok_or(GatewayError::ReplayMiss(hash))
            }
            GatewayMode::Record => {
                let store = self.store.as_ref().expect("record gateways own a store");
                if let Some(t) = store.get(&hash) {
                    return Ok(t.response_text);
                }
                let text = self.call_backend(request)?;
                let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                let t = store.append(Transcript {
                    request_hash: hash,
                    kind: request.prompt_kind,
                    attempt: request.attempt,
                    response_text: text,
                    timestamp,
                    model_tag: self.model_tag.clone(),
                })?;
                Ok(t.response_text)
            }
        }
    }
}
