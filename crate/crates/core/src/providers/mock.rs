use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    fingerprint, ChatProvider, ChatRequest, ChatResponse, EmbeddingBackend, ProviderError,
};

/// Answers any request whose final user message contains `contains`.
/// Successive matches walk through `responses`, then repeat the last one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub by_fingerprint: BTreeMap<String, Vec<String>>,
    pub rules: Vec<MockRule>,
    pub default: Option<String>,
}

impl MockScript {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))
    }
}

/// Scripted chat provider. Lookup order: exact fingerprint, first matching
/// rule, default.
pub struct MockChat {
    script: MockScript,
    cursors: Mutex<HashMap<String, usize>>,
    calls: AtomicUsize,
}

impl MockChat {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            cursors: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn next(&self, key: String, responses: &[String]) -> Option<String> {
        let mut cursors = self.cursors.lock().expect("mock lock");
        let cursor = cursors.entry(key).or_insert(0);
        let idx = (*cursor).min(responses.len().checked_sub(1)?);
        *cursor += 1;
        Some(responses[idx].clone())
    }
}

impl ChatProvider for MockChat {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fp = fingerprint(request);
        if let Some(list) = self.script.by_fingerprint.get(&fp) {
            if let Some(text) = self.next(format!("fp:{fp}"), list) {
                return Ok(ChatResponse::stop(text));
            }
        }
        let prompt = request
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        for (i, rule) in self.script.rules.iter().enumerate() {
            if prompt.contains(&rule.contains) {
                if let Some(text) = self.next(format!("rule:{i}:{fp}"), &rule.responses) {
                    return Ok(ChatResponse::stop(text));
                }
            }
        }
        self.script
            .default
            .clone()
            .map(ChatResponse::stop)
            .ok_or(ProviderError::NoScriptedResponse(fp))
    }
}

/// Deterministic bag-of-words embedder: each word and adjacent word pair
/// is hashed into one of `dim` signed buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let mut values = vec![0.0; self.dim];
        let mut add = |feature: &str, weight: f64| {
            let h = fnv1a(feature.as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            values[(h % self.dim as u64) as usize] += sign * weight;
        };
        for w in &words {
            add(w, 1.0);
        }
        for pair in words.windows(2) {
            add(&format!("{} {}", pair[0], pair[1]), 0.5);
        }
        if values.iter().all(|v| *v == 0.0) {
            values[0] = 1.0;
        }
        values
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbeddingBackend for HashingEmbedder {
    fn embed_batch(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Fixed vectors per text, for tests that need to control similarity.
/// Counts backend calls so caching can be observed.
pub struct ScriptedEmbedder {
    vectors: HashMap<String, Vec<f64>>,
    fallback: Option<HashingEmbedder>,
    calls: AtomicUsize,
    texts: Mutex<Vec<String>>,
}

impl ScriptedEmbedder {
    pub fn new(vectors: HashMap<String, Vec<f64>>) -> Self {
        Self {
            vectors,
            fallback: None,
            calls: AtomicUsize::new(0),
            texts: Mutex::new(Vec::new()),
        }
    }

    pub fn with_fallback(mut self, fallback: HashingEmbedder) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every text passed to the backend, in call order.
    pub fn texts_seen(&self) -> Vec<String> {
        self.texts.lock().expect("embedder lock").clone()
    }
}

impl EmbeddingBackend for ScriptedEmbedder {
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.texts
            .lock()
            .expect("embedder lock")
            .extend(texts.iter().cloned());
        texts
            .iter()
            .map(|t| match (self.vectors.get(t), &self.fallback) {
                (Some(v), _) => Ok(v.clone()),
                (None, Some(f)) => Ok(f.embed_text(t)),
                (None, None) => Err(ProviderError::NoScriptedResponse(format!("{model}: {t}"))),
            })
            .collect()
    }
}
