use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{ChatProvider, ChatRequest, ChatResponse, EmbeddingBackend, ProviderError, Usage};

pub const ENV_API_KEY: &str = "CAF_API_KEY";
pub const ENV_BASE_URL: &str = "CAF_BASE_URL";
const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// The only network surface. Tests swap in transports that script replies or
/// fail on use.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpReply, ProviderError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<HttpReply, ProviderError> {
        let mut request = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(token) = bearer {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        match request.send_json(body) {
            Ok(mut response) => {
                let status = response.status().as_u16();
                let body = response
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| ProviderError::Network(e.to_string()))?;
                Ok(HttpReply { status, body })
            }
            Err(ureq::Error::Timeout(t)) => Err(ProviderError::Timeout(t.to_string())),
            Err(e) => Err(ProviderError::Network(e.to_string())),
        }
    }
}

/// Exponential backoff: the wait after failed attempt `n` is
/// `base * 2^(n-1)`, scaled by a random factor in `[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffPolicy {
    pub max_attempts: u32,
    pub base: Duration,
    pub jitter: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base: Duration::from_millis(500),
            jitter: 0.2,
        }
    }
}

impl BackoffPolicy {
    pub fn nominal_delay(&self, attempt: u32) -> Duration {
        self.base * 2u32.saturating_pow(attempt.saturating_sub(1))
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let nominal = self.nominal_delay(attempt);
        if self.jitter <= 0.0 {
            return nominal;
        }
        let factor = rand::rng().random_range(1.0 - self.jitter..=1.0 + self.jitter);
        nominal.mul_f64(factor.max(0.0))
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Client for OpenAI-compatible `/chat/completions` and `/embeddings`.
pub struct OpenAiClient {
    base_url: String,
    api_key: Option<String>,
    transport: Arc<dyn Transport>,
    backoff: BackoffPolicy,
    sleeper: Sleeper,
    // Shared across threads: a 429 seen by one caller delays all of them.
    cooldown_until: Mutex<Option<Instant>>,
}

impl OpenAiClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        transport: Arc<dyn Transport>,
    ) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            transport,
            backoff: BackoffPolicy::default(),
            sleeper: Arc::new(std::thread::sleep),
            cooldown_until: Mutex::new(None),
        }
    }

    /// Reads the base URL and key from `CAF_BASE_URL` and `CAF_API_KEY`.
    pub fn from_env(timeout: Duration) -> Result<Self, ProviderError> {
        let api_key = std::env::var(ENV_API_KEY)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ProviderError::Config(format!("{ENV_API_KEY} is not set")))?;
        let base = std::env::var(ENV_BASE_URL)
            .ok()
            .filter(|b| !b.is_empty())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
        Ok(Self::new(
            base,
            Some(api_key),
            Arc::new(UreqTransport::new(timeout)),
        ))
    }

    pub fn with_backoff(mut self, backoff: BackoffPolicy) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.wait_for_cooldown();
            let result = self
                .transport
                .post_json(&url, self.api_key.as_deref(), body)
                .and_then(classify);
            match result {
                Ok(value) => return Ok(value),
                Err(e) if e.is_transient() && attempt < self.backoff.max_attempts => {
                    let delay = self.backoff.delay(attempt);
                    warn!(%url, attempt, ?delay, error = %e, "retrying provider call");
                    if matches!(e, ProviderError::RateLimited { .. }) {
                        let mut until = self.cooldown_until.lock().expect("cooldown lock");
                        *until = Some(Instant::now() + delay);
                    }
                    (self.sleeper)(delay);
                }
                Err(ProviderError::RateLimited { .. }) => {
                    return Err(ProviderError::RateLimited { attempts: attempt })
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn wait_for_cooldown(&self) {
        let remaining = {
            let until = self.cooldown_until.lock().expect("cooldown lock");
            until.and_then(|u| u.checked_duration_since(Instant::now()))
        };
        if let Some(d) = remaining {
            debug!(?d, "waiting out shared rate-limit cooldown");
            (self.sleeper)(d);
        }
    }
}

fn classify(reply: HttpReply) -> Result<Value, ProviderError> {
    match reply.status {
        200..=299 => serde_json::from_str(&reply.body)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string())),
        401 | 403 => Err(ProviderError::Auth(reply.body)),
        429 => Err(ProviderError::RateLimited { attempts: 0 }),
        408 => Err(ProviderError::Timeout(reply.body)),
        status => Err(ProviderError::Http {
            status,
            body: reply.body,
        }),
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: MessageBody,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct MessageBody {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct EmbeddingsBody {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl ChatProvider for OpenAiClient {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let mut body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": request.messages,
        });
        if let Some(max) = request.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let value = self.post("chat/completions", &body)?;
        let parsed: CompletionBody = serde_json::from_value(value)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::MalformedResponse("no choices".into()))?;
        let finish_reason = choice.finish_reason.unwrap_or_else(|| "stop".into());
        let text = match choice.message.content {
            Some(text) => text,
            None if finish_reason == "stop" => {
                return Err(ProviderError::MalformedResponse(
                    "stopped without message content".into(),
                ))
            }
            None => String::new(),
        };
        Ok(ChatResponse {
            text,
            finish_reason,
            usage: parsed.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
        })
    }
}

impl EmbeddingBackend for OpenAiClient {
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let value = self.post("embeddings", &json!({"model": model, "input": texts}))?;
        let parsed: EmbeddingsBody = serde_json::from_value(value)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::MalformedResponse(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut items: Vec<(usize, Vec<f64>)> = parsed
            .data
            .into_iter()
            .enumerate()
            .map(|(i, item)| (item.index.unwrap_or(i), item.embedding))
            .collect();
        items.sort_by_key(|(i, _)| *i);
        Ok(items.into_iter().map(|(_, v)| v).collect())
    }
}
