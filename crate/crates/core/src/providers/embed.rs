use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingBackend, EmbeddingVector, ProviderError};

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    model: String,
    text_hash: String,
    values: Vec<f64>,
}

/// Normalizing, caching front end over an [`EmbeddingBackend`].
///
/// Each distinct `(model, text)` reaches the backend at most once per
/// embedder; with a cache file, at most once across processes.
pub struct Embedder {
    backend: Box<dyn EmbeddingBackend>,
    cache: RwLock<HashMap<(String, String), EmbeddingVector>>,
    cache_file: Option<Mutex<File>>,
    backend_calls: AtomicUsize,
}

impl Embedder {
    pub fn new(backend: Box<dyn EmbeddingBackend>) -> Self {
        Self {
            backend,
            cache: RwLock::new(HashMap::new()),
            cache_file: None,
            backend_calls: AtomicUsize::new(0),
        }
    }

    /// Loads vectors from a JSONL cache file and appends new ones to it.
    pub fn with_cache_file(mut self, path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let io_err = |e: std::io::Error| {
            ProviderError::Config(format!("embedding cache {}: {e}", path.display()))
        };
        if path.exists() {
            let text = fs::read_to_string(path).map_err(io_err)?;
            let mut cache = self.cache.write().expect("embedding cache lock");
            for (i, line) in text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
            {
                let entry: CacheLine = serde_json::from_str(line).map_err(|e| {
                    ProviderError::Config(format!("embedding cache line {}: {e}", i + 1))
                })?;
                let vector = EmbeddingVector::normalized(entry.values, entry.model.clone())?;
                cache.insert((entry.model, entry.text_hash), vector);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        self.cache_file = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn embed_one(&self, model: &str, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut v = self.embed(model, &[text.to_string()])?;
        Ok(v.remove(0))
    }

    /// Embeds `texts` in order. Cache misses go to the backend in one batch.
    pub fn embed(
        &self,
        model: &str,
        texts: &[String],
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(ProviderError::InvalidRequest(format!("text {i} is empty")));
        }
        let keys: Vec<(String, String)> = texts
            .iter()
            .map(|t| (model.to_string(), text_hash(t)))
            .collect();

        let missing: Vec<(usize, &(String, String))> = {
            let cache = self.cache.read().expect("embedding cache lock");
            let mut seen = HashSet::new();
            keys.iter()
                .enumerate()
                .filter(|(_, k)| !cache.contains_key(*k) && seen.insert(*k))
                .collect()
        };

        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|(i, _)| texts[*i].clone()).collect();
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            let raw = self.backend.embed_batch(model, &batch)?;
            if raw.len() != batch.len() {
                return Err(ProviderError::MalformedResponse(format!(
                    "backend returned {} vectors for {} texts",
                    raw.len(),
                    batch.len()
                )));
            }
            let expected_dim = self.known_dim(model).unwrap_or(raw[0].len());
            let mut fresh = Vec::with_capacity(raw.len());
            for values in raw {
                if values.len() != expected_dim {
                    return Err(ProviderError::DimensionMismatch {
                        expected: expected_dim,
                        got: values.len(),
                    });
                }
                fresh.push(EmbeddingVector::normalized(values, model)?);
            }
            self.persist(&missing, &fresh)?;
            let mut cache = self.cache.write().expect("embedding cache lock");
            for ((_, key), vector) in missing.iter().zip(fresh) {
                cache.insert((*key).clone(), vector);
            }
        }

        let cache = self.cache.read().expect("embedding cache lock");
        Ok(keys.iter().map(|k| cache[k].clone()).collect())
    }

    fn known_dim(&self, model: &str) -> Option<usize> {
        let cache = self.cache.read().expect("embedding cache lock");
        cache
            .iter()
            .find(|((m, _), _)| m == model)
            .map(|(_, v)| v.dim())
    }

    fn persist(
        &self,
        keys: &[(usize, &(String, String))],
        vectors: &[EmbeddingVector],
    ) -> Result<(), ProviderError> {
        let Some(file) = &self.cache_file else {
            return Ok(());
        };
        let mut out = String::new();
        for ((_, (model, hash)), vector) in keys.iter().zip(vectors) {
            let line = CacheLine {
                model: model.clone(),
                text_hash: hash.clone(),
                values: vector.values().to_vec(),
            };
            out.push_str(&serde_json::to_string(&line).expect("cache line serializes"));
            out.push('\n');
        }
        let mut file = file.lock().expect("embedding cache file lock");
        file.write_all(out.as_bytes())
            .map_err(|e| ProviderError::Config(format!("embedding cache write: {e}")))
    }
}
