//! Chat-completion and embedding backends.
//!
//! Every backend speaks the same two traits. The live client talks to an
//! OpenAI-compatible HTTP endpoint; cassettes record and replay its traffic
//! keyed by a request fingerprint; mocks answer from scripts.

mod cassette;
mod embed;
mod http;
mod mock;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::templating::{ChatMessage, Role};

pub use cassette::{
    Cassette, CassetteEntry, CassetteWriter, RecordedEmbedding, RecordedResponse, RecordingChat,
    RecordingEmbeddings, ReplayChat, ReplayEmbeddings,
};
pub use embed::{text_hash, Embedder};
pub use http::{
    BackoffPolicy, HttpReply, OpenAiClient, Sleeper, Transport, UreqTransport, ENV_API_KEY,
    ENV_BASE_URL,
};
pub use mock::{HashingEmbedder, MockChat, MockRule, MockScript, ScriptedEmbedder};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 64;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("replay miss for fingerprint {fingerprint} (entry {index})")]
    ReplayMiss { fingerprint: String, index: usize },
    #[error("no scripted response for fingerprint {0}")]
    NoScriptedResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette error: {0}")]
    Cassette(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    /// Worth another attempt with backoff.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::RateLimited { .. }
            | ProviderError::Timeout(_)
            | ProviderError::Network(_) => true,
            ProviderError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }

    /// Ends a whole run rather than a single clause.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            ProviderError::Auth(_)
                | ProviderError::ReplayMiss { .. }
                | ProviderError::NoScriptedResponse(_)
                | ProviderError::InvalidRequest(_)
                | ProviderError::Cassette(_)
                | ProviderError::Config(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: Some(DEFAULT_MAX_TOKENS),
            messages,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == Some(0) {
            return Err(ProviderError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        match self.messages.last() {
            None => Err(ProviderError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::User => Err(ProviderError::InvalidRequest(
                "the last message must come from the user".into(),
            )),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ChatResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: "stop".into(),
            usage: None,
        }
    }
}

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    pub model: String,
}

impl EmbeddingVector {
    /// Scales `values` to unit Euclidean norm.
    pub fn normalized(values: Vec<f64>, model: impl Into<String>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::MalformedResponse("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::MalformedResponse(
                "non-finite embedding value".into(),
            ));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ProviderError::MalformedResponse(
                "zero embedding vector".into(),
            ));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
            model: model.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub trait ChatProvider: Send + Sync {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

/// Returns one raw (not yet normalized) vector per input text, in order.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

impl<T: ChatProvider + ?Sized> ChatProvider for Box<T> {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).chat_complete(request)
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<T> {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).chat_complete(request)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<T> {
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed_batch(model, texts)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for std::sync::Arc<T> {
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed_batch(model, texts)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash over every field that changes what a backend would return.
///
/// The request is re-encoded as JSON with sorted keys, so the hash does not
/// depend on how the request was originally serialized.
pub fn fingerprint(request: &ChatRequest) -> String {
    // -0.0 and 0.0 are the same temperature
    let temperature = if request.temperature == 0.0 {
        0.0
    } else {
        request.temperature
    };
    let canonical = json!({
        "kind": "chat",
        "model": request.model,
        "temperature": temperature,
        "max_tokens": request.max_tokens,
        "messages": request
            .messages
            .iter()
            .map(|m| json!({"role": m.role, "content": m.content}))
            .collect::<Vec<_>>(),
    });
    sha256_hex(canonical.to_string().as_bytes())
}

pub fn embedding_fingerprint(model: &str, text: &str) -> String {
    let canonical = json!({"kind": "embedding", "model": model, "text": text});
    sha256_hex(canonical.to_string().as_bytes())
}
