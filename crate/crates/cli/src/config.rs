//! Run configuration files.
//!
//! Relative paths inside a config file resolve against the directory that
//! holds the file, so configs can live next to the assets they name.

use std::path::{Path, PathBuf};

use caf_core::canonicalize::Canonicalizer;
use caf_core::templating::AnswerStyle;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Live,
    Record,
    Replay,
    Mock,
}

/// What a record-mode run forwards to before writing the cassette.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    #[default]
    Live,
    Mock,
}

fn default_model() -> String {
    "gpt-3.5-turbo".into()
}

fn default_embedding_model() -> String {
    "text-embedding-ada-002".into()
}

fn default_max_tokens() -> Option<u32> {
    Some(caf_core::providers::DEFAULT_MAX_TOKENS)
}

fn default_parallelism() -> usize {
    caf_core::pipeline::DEFAULT_PARALLELISM
}

fn default_embedding_dim() -> usize {
    256
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cassette_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    #[serde(default)]
    pub record_source: RecordSource,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_embedding_model")]
    pub embedding_model: String,
    /// Vector size of the offline hashing embedder used in mock mode.
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_cache: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl ProviderConfig {
    pub fn new(mode: ProviderMode) -> Self {
        Self {
            mode,
            cassette_path: None,
            mock_script: None,
            record_source: RecordSource::Live,
            model: default_model(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            parallelism: default_parallelism(),
            embedding_model: default_embedding_model(),
            embedding_dim: default_embedding_dim(),
            embedding_cache: None,
            timeout_secs: default_timeout(),
        }
    }

    /// Checks the fields the mode depends on. `needs_chat` is false for
    /// embedding-only runs, which do not need a mock script.
    pub fn validate(&self, needs_chat: bool) -> Result<(), CliError> {
        if matches!(self.mode, ProviderMode::Record | ProviderMode::Replay)
            && self.cassette_path.is_none()
        {
            return Err(CliError::Config(format!(
                "provider mode {:?} needs cassette_path",
                self.mode
            )));
        }
        let wants_script = needs_chat
            && (self.mode == ProviderMode::Mock
                || (self.mode == ProviderMode::Record && self.record_source == RecordSource::Mock));
        if wants_script && self.mock_script.is_none() {
            return Err(CliError::Config("mock chat needs mock_script".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(CliError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.embedding_dim == 0 {
            return Err(CliError::Config("embedding_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding `registry.json`.
    pub assets_dir: PathBuf,
    /// Registry id of the dataset to evaluate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Explicit dataset file, used instead of `dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    pub option_set_id: String,
    #[serde(default)]
    pub example_set_ids: Vec<String>,
    /// Registry id of the dataset example clauses come from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_corpus: Option<String>,
    #[serde(default)]
    pub answer_style: AnswerStyle,
    pub provider: ProviderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonicalizer: Option<Canonicalizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    /// A config built in code, with relative paths taken from `base_dir`.
    pub fn with_base_dir(mut self, base_dir: impl Into<PathBuf>) -> Self {
        self.base_dir = base_dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self, needs_template: bool) -> Result<(), CliError> {
        if self.dataset.is_none() && self.dataset_path.is_none() {
            return Err(CliError::Config(
                "config names neither dataset nor dataset_path".into(),
            ));
        }
        if needs_template && self.template_id.is_none() {
            return Err(CliError::Config("config needs template_id".into()));
        }
        if self.provider.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        self.provider.validate(needs_template)
    }

    /// The config as echoed into reports. The output location is left out so
    /// reports written to different places stay byte-identical.
    pub fn echo(&self) -> serde_json::Value {
        let mut copy = self.clone();
        copy.output_path = None;
        serde_json::to_value(&copy).expect("config serializes")
    }
}

/// Command-line overrides. Paths given on the command line are relative to
/// the working directory, not the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub template_id: Option<String>,
    pub option_set_id: Option<String>,
    pub example_set_ids: Option<Vec<String>>,
    pub provider_mode: Option<ProviderMode>,
    pub cassette_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
}

fn absolute(path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        path
    } else {
        std::env::current_dir()
            .map(|d| d.join(&path))
            .unwrap_or(path)
    }
}

impl Overrides {
    pub fn apply(self, cfg: &mut RunConfig) {
        if let Some(t) = self.template_id {
            cfg.template_id = Some(t);
        }
        if let Some(o) = self.option_set_id {
            cfg.option_set_id = o;
        }
        if let Some(e) = self.example_set_ids {
            cfg.example_set_ids = e;
        }
        if let Some(m) = self.provider_mode {
            cfg.provider.mode = m;
        }
        if let Some(c) = self.cassette_path {
            cfg.provider.cassette_path = Some(absolute(c));
        }
        if let Some(o) = self.output_path {
            cfg.output_path = Some(absolute(o));
        }
    }
}
