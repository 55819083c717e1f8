//! Record/replay of provider traffic.
//!
//! A cassette file is JSON Lines, one entry per recorded call:
//! `{"fingerprint": "...", "index": 0, "response": {...}, "recorded_at": "..."}`.
//! Entries sharing a fingerprint replay in index order, so repeated
//! identical requests (reruns) get their own recorded answers.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{
    embedding_fingerprint, fingerprint, ChatProvider, ChatRequest, ChatResponse, EmbeddingBackend,
    ProviderError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedEmbedding {
    pub model: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordedResponse {
    Chat(ChatResponse),
    Embedding(RecordedEmbedding),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub index: usize,
    pub response: RecordedResponse,
    pub recorded_at: String,
}

/// Loaded, immutable cassette contents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cassette {
    entries: BTreeMap<String, Vec<RecordedResponse>>,
}

impl Cassette {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Cassette(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        let mut raw: BTreeMap<String, Vec<(usize, RecordedResponse)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(line)
                .map_err(|e| ProviderError::Cassette(format!("line {}: {e}", i + 1)))?;
            raw.entry(entry.fingerprint)
                .or_default()
                .push((entry.index, entry.response));
        }
        let mut entries = BTreeMap::new();
        for (fp, mut list) in raw {
            list.sort_by_key(|(i, _)| *i);
            for (expected, (index, _)) in list.iter().enumerate() {
                if *index != expected {
                    return Err(ProviderError::Cassette(format!(
                        "fingerprint {fp}: indices must run 0..n without gaps, found {index} at position {expected}"
                    )));
                }
            }
            entries.insert(fp, list.into_iter().map(|(_, r)| r).collect());
        }
        Ok(Self { entries })
    }

    pub fn responses(&self, fingerprint: &str) -> &[RecordedResponse] {
        self.entries
            .get(fingerprint)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn fingerprints(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fewest recorded entries over all chat fingerprints.
    pub fn min_chat_depth(&self) -> usize {
        self.entries
            .values()
            .filter(|v| v.iter().any(|r| matches!(r, RecordedResponse::Chat(_))))
            .map(Vec::len)
            .min()
            .unwrap_or(0)
    }
}

/// Appends entries to a cassette file. Writes are serialized through a lock.
pub struct CassetteWriter {
    path: PathBuf,
    state: Mutex<WriterState>,
}

struct WriterState {
    file: File,
    counts: HashMap<String, usize>,
}

impl CassetteWriter {
    /// Opens `path` for appending, continuing indices of any existing entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref().to_path_buf();
        let counts = if path.exists() {
            Cassette::load(&path)?
                .entries
                .into_iter()
                .map(|(fp, v)| (fp, v.len()))
                .collect()
        } else {
            HashMap::new()
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| {
                ProviderError::Cassette(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ProviderError::Cassette(format!("cannot open {}: {e}", path.display())))?;
        Ok(Self {
            path,
            state: Mutex::new(WriterState { file, counts }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn recorded(&self, fingerprint: &str) -> usize {
        let state = self.state.lock().expect("cassette lock");
        state.counts.get(fingerprint).copied().unwrap_or(0)
    }

    pub fn append(
        &self,
        fingerprint: &str,
        response: RecordedResponse,
    ) -> Result<usize, ProviderError> {
        let mut state = self.state.lock().expect("cassette lock");
        let index = state.counts.get(fingerprint).copied().unwrap_or(0);
        let entry = CassetteEntry {
            fingerprint: fingerprint.to_string(),
            index,
            response,
            recorded_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        };
        let mut line =
            serde_json::to_string(&entry).map_err(|e| ProviderError::Cassette(e.to_string()))?;
        line.push('\n');
        state
            .file
            .write_all(line.as_bytes())
            .and_then(|_| state.file.flush())
            .map_err(|e| ProviderError::Cassette(format!("write {}: {e}", self.path.display())))?;
        state.counts.insert(fingerprint.to_string(), index + 1);
        Ok(index)
    }
}

/// Forwards to a live provider and records every response.
pub struct RecordingChat {
    inner: Box<dyn ChatProvider>,
    writer: Arc<CassetteWriter>,
}

impl RecordingChat {
    pub fn new(inner: Box<dyn ChatProvider>, writer: Arc<CassetteWriter>) -> Self {
        Self { inner, writer }
    }
}

impl ChatProvider for RecordingChat {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let response = self.inner.chat_complete(request)?;
        self.writer.append(
            &fingerprint(request),
            RecordedResponse::Chat(response.clone()),
        )?;
        Ok(response)
    }
}

/// Serves recorded chat responses without touching the network.
pub struct ReplayChat {
    cassette: Arc<Cassette>,
    cursors: HashMap<String, AtomicUsize>,
}

impl ReplayChat {
    pub fn new(cassette: Arc<Cassette>) -> Self {
        let cursors = cassette
            .fingerprints()
            .map(|fp| (fp.to_string(), AtomicUsize::new(0)))
            .collect();
        Self { cassette, cursors }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        Ok(Self::new(Arc::new(Cassette::load(path)?)))
    }
}

impl ChatProvider for ReplayChat {
    fn chat_complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let fp = fingerprint(request);
        let miss = |index| ProviderError::ReplayMiss {
            fingerprint: fp.clone(),
            index,
        };
        let cursor = self.cursors.get(&fp).ok_or_else(|| miss(0))?;
        let index = cursor.fetch_add(1, Ordering::SeqCst);
        match self.cassette.responses(&fp).get(index) {
            Some(RecordedResponse::Chat(r)) => Ok(r.clone()),
            Some(RecordedResponse::Embedding(_)) => Err(ProviderError::Cassette(format!(
                "fingerprint {fp} holds an embedding, not a chat response"
            ))),
            None => Err(miss(index)),
        }
    }
}

/// Records embeddings per text. A text already on the cassette is not
/// recorded again.
pub struct RecordingEmbeddings {
    inner: Box<dyn EmbeddingBackend>,
    writer: Arc<CassetteWriter>,
}

impl RecordingEmbeddings {
    pub fn new(inner: Box<dyn EmbeddingBackend>, writer: Arc<CassetteWriter>) -> Self {
        Self { inner, writer }
    }
}

impl EmbeddingBackend for RecordingEmbeddings {
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let vectors = self.inner.embed_batch(model, texts)?;
        for (text, values) in texts.iter().zip(&vectors) {
            let fp = embedding_fingerprint(model, text);
            if self.writer.recorded(&fp) == 0 {
                self.writer.append(
                    &fp,
                    RecordedResponse::Embedding(RecordedEmbedding {
                        model: model.to_string(),
                        values: values.clone(),
                    }),
                )?;
            }
        }
        Ok(vectors)
    }
}

/// Embeddings are deterministic per text, so replay always serves the first
/// recorded entry.
pub struct ReplayEmbeddings {
    cassette: Arc<Cassette>,
}

impl ReplayEmbeddings {
    pub fn new(cassette: Arc<Cassette>) -> Self {
        Self { cassette }
    }
}

impl EmbeddingBackend for ReplayEmbeddings {
    fn embed_batch(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        texts
            .iter()
            .map(|text| {
                let fp = embedding_fingerprint(model, text);
                match self.cassette.responses(&fp).first() {
                    Some(RecordedResponse::Embedding(e)) => Ok(e.values.clone()),
                    Some(RecordedResponse::Chat(_)) => Err(ProviderError::Cassette(format!(
                        "fingerprint {fp} holds a chat response, not an embedding"
                    ))),
                    None => Err(ProviderError::ReplayMiss {
                        fingerprint: fp,
                        index: 0,
                    }),
                }
            })
            .collect()
    }
}
