//! Batch commands: generation runs, the similarity baseline and rerun
//! consistency.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use caf_core::canonicalize::Canonicalizer;
use caf_core::corpus::{Dataset, Question, QuestionMode};
use caf_core::providers::{
    fingerprint, Cassette, CassetteWriter, HashingEmbedder, MockChat, MockScript, OpenAiClient,
    RecordingChat, RecordingEmbeddings, ReplayChat, ReplayEmbeddings,
};
use caf_core::report::{ArtifactHash, BASELINE_NOTE, ESCAPE_SCORING_NOTE, LENIENT_SCORING_NOTE};
use caf_core::templating::{ExampleSet, PromptTemplate};
use caf_core::{
    consistency, run_baseline, run_generation, ChatProvider, ConsistencyRunReport, Embedder,
    EmbeddingBackend, GenerationSetup, OptionSet, Registry, RunReport, SynonymTable,
};
use tracing::info;

use crate::config::{ProviderConfig, ProviderMode, RecordSource, RunConfig};
use crate::error::CliError;

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn cassette_path(provider: &ProviderConfig, base: &Path) -> Result<PathBuf, CliError> {
    provider
        .cassette_path
        .as_deref()
        .map(|p| resolve(base, p))
        .ok_or_else(|| CliError::Config("provider mode needs cassette_path".into()))
}

fn existing_cassette(provider: &ProviderConfig, base: &Path) -> Result<PathBuf, CliError> {
    let path = cassette_path(provider, base)?;
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "cassette not found: {}",
            path.display()
        )));
    }
    Ok(path)
}

fn mock_chat(provider: &ProviderConfig, base: &Path) -> Result<MockChat, CliError> {
    let path = provider
        .mock_script
        .as_deref()
        .map(|p| resolve(base, p))
        .ok_or_else(|| CliError::Config("mock chat needs mock_script".into()))?;
    Ok(MockChat::new(MockScript::load(path)?))
}

fn live_client(provider: &ProviderConfig) -> Result<OpenAiClient, CliError> {
    Ok(OpenAiClient::from_env(Duration::from_secs(
        provider.timeout_secs,
    ))?)
}

/// Builds the chat backend a provider config describes. Relative paths
/// resolve against `base`.
pub fn build_chat(
    provider: &ProviderConfig,
    base: &Path,
) -> Result<Box<dyn ChatProvider>, CliError> {
    Ok(match provider.mode {
        ProviderMode::Live => Box::new(live_client(provider)?),
        ProviderMode::Mock => Box::new(mock_chat(provider, base)?),
        ProviderMode::Replay => Box::new(ReplayChat::load(existing_cassette(provider, base)?)?),
        ProviderMode::Record => {
            let writer = Arc::new(CassetteWriter::open(cassette_path(provider, base)?)?);
            let inner: Box<dyn ChatProvider> = match provider.record_source {
                RecordSource::Live => Box::new(live_client(provider)?),
                RecordSource::Mock => Box::new(mock_chat(provider, base)?),
            };
            Box::new(RecordingChat::new(inner, writer))
        }
    })
}

pub fn build_embedder(provider: &ProviderConfig, base: &Path) -> Result<Embedder, CliError> {
    let backend: Box<dyn EmbeddingBackend> = match provider.mode {
        ProviderMode::Live => Box::new(live_client(provider)?),
        ProviderMode::Mock => Box::new(HashingEmbedder::new(provider.embedding_dim)),
        ProviderMode::Replay => Box::new(ReplayEmbeddings::new(Arc::new(Cassette::load(
            existing_cassette(provider, base)?,
        )?))),
        ProviderMode::Record => {
            let writer = Arc::new(CassetteWriter::open(cassette_path(provider, base)?)?);
            let inner: Box<dyn EmbeddingBackend> = match provider.record_source {
                RecordSource::Live => Box::new(live_client(provider)?),
                RecordSource::Mock => Box::new(HashingEmbedder::new(provider.embedding_dim)),
            };
            Box::new(RecordingEmbeddings::new(inner, writer))
        }
    };
    let embedder = Embedder::new(backend);
    match &provider.embedding_cache {
        Some(p) => Ok(embedder.with_cache_file(resolve(base, p))?),
        None => Ok(embedder),
    }
}

/// Everything a run reads, loaded and cross-checked.
pub struct Artifacts {
    pub registry: Registry,
    pub dataset: Dataset,
    pub question: Question,
    pub option_set: OptionSet,
    pub template: Option<PromptTemplate>,
    pub synonyms: Option<SynonymTable>,
    pub example_sets: Vec<ExampleSet>,
    pub example_corpus: Option<Dataset>,
    pub hashes: Vec<ArtifactHash>,
}

fn hash(kind: &str, id: &str, path: &Path) -> Result<ArtifactHash, CliError> {
    ArtifactHash::of_file(kind, id, path).map_err(|e| CliError::io(path, e))
}

impl Artifacts {
    pub fn load(cfg: &RunConfig, needs_template: bool) -> Result<Self, CliError> {
        cfg.validate(needs_template)?;
        let registry = Registry::load(cfg.resolve(&cfg.assets_dir))?;
        let mut hashes = Vec::new();

        let (dataset_id, dataset_path) = match (&cfg.dataset_path, &cfg.dataset) {
            (Some(p), _) => ("file".to_string(), cfg.resolve(p)),
            (None, Some(id)) => (id.clone(), registry.dataset_path(id)?.to_path_buf()),
            (None, None) => unreachable!("validated above"),
        };
        let dataset = Dataset::load(&dataset_path)
            .map_err(|e| CliError::Config(format!("{}: {e}", dataset_path.display())))?;
        hashes.push(hash("dataset", &dataset_id, &dataset_path)?);

        let option_set = registry.option_set(&cfg.option_set_id)?.clone();
        hashes.push(hash(
            "option_set",
            &option_set.id,
            registry.option_set_path(&option_set.id)?,
        )?);
        let question = registry.question(&option_set.question_id)?.clone();
        if dataset.question_id() != question.id {
            return Err(CliError::Config(format!(
                "dataset is labelled for question {}, option set {} answers {}",
                dataset.question_id(),
                option_set.id,
                question.id
            )));
        }

        let synonyms = registry.synonyms_for(&option_set)?.cloned();
        if let Some(id) = &option_set.synonym_table_id {
            hashes.push(hash("synonym_table", id, registry.synonym_table_path(id)?)?);
        }

        let template = match (&cfg.template_id, needs_template) {
            (Some(id), true) => {
                hashes.push(hash("template", id, registry.template_path(id)?)?);
                Some(registry.template(id)?.clone())
            }
            _ => None,
        };

        let mut example_sets = Vec::new();
        for id in &cfg.example_set_ids {
            hashes.push(hash("example_set", id, registry.example_set_path(id)?)?);
            example_sets.push(registry.example_set(id)?.clone());
        }
        let example_corpus = match &cfg.example_corpus {
            Some(id) => {
                hashes.push(hash("example_corpus", id, registry.dataset_path(id)?)?);
                Some(registry.dataset(id)?)
            }
            None => None,
        };

        if let Some(script) = &cfg.provider.mock_script {
            let uses_script = cfg.provider.mode == ProviderMode::Mock
                || (cfg.provider.mode == ProviderMode::Record
                    && cfg.provider.record_source == RecordSource::Mock);
            if uses_script && needs_template {
                hashes.push(hash("mock_script", "mock", &cfg.resolve(script))?);
            }
        }
        if cfg.provider.mode == ProviderMode::Replay {
            let path = existing_cassette(&cfg.provider, cfg.base_dir())?;
            hashes.push(hash("cassette", "replay", &path)?);
        }

        Ok(Self {
            registry,
            dataset,
            question,
            option_set,
            template,
            synonyms,
            example_sets,
            example_corpus,
            hashes,
        })
    }

    pub fn setup<'a>(
        &'a self,
        cfg: &'a RunConfig,
        canonicalizer: &'a Canonicalizer,
    ) -> GenerationSetup<'a> {
        GenerationSetup {
            template: self
                .template
                .as_ref()
                .expect("generation runs load a template"),
            option_set: &self.option_set,
            question: &self.question,
            synonyms: self.synonyms.as_ref(),
            canonicalizer,
            example_sets: &self.example_sets,
            example_corpus: self.example_corpus.as_ref(),
            answer_style: cfg.answer_style,
            model: &cfg.provider.model,
            temperature: cfg.provider.temperature,
            max_tokens: cfg.provider.max_tokens,
            parallelism: cfg.provider.parallelism,
        }
    }

    fn notes(&self, baseline: bool) -> Vec<String> {
        let mut notes = vec![ESCAPE_SCORING_NOTE.to_string()];
        if self.question.mode == QuestionMode::MultiSelect {
            notes.push(LENIENT_SCORING_NOTE.to_string());
        }
        if baseline {
            notes.push(BASELINE_NOTE.to_string());
        }
        notes
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_report(
    cfg: &RunConfig,
    report: &RunReport,
    option_set: &OptionSet,
) -> Result<(), CliError> {
    if let Some(out) = &cfg.output_path {
        let out = cfg.resolve(out);
        write_file(&out, &report.to_json())?;
        write_file(&out.with_extension("txt"), &report.table(option_set))?;
        info!(path = %out.display(), "report written");
    }
    Ok(())
}

/// Renders, generates, canonicalizes and scores every clause.
pub fn cmd_eval(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let artifacts = Artifacts::load(cfg, true)?;
    let chat = build_chat(&cfg.provider, cfg.base_dir())?;
    let canonicalizer = cfg.canonicalizer.clone().unwrap_or_default();
    let setup = artifacts.setup(cfg, &canonicalizer);
    let run = run_generation(&artifacts.dataset, &setup, chat.as_ref())?;
    let label = cfg
        .label
        .clone()
        .unwrap_or_else(|| format!("{} {}", setup.template.id, artifacts.option_set.id));
    let report = RunReport::new(
        "generation",
        &label,
        cfg.echo(),
        artifacts.hashes.clone(),
        &artifacts.question.id,
        &artifacts.option_set,
        run,
        artifacts.notes(false),
    );
    write_report(cfg, &report, &artifacts.option_set)?;
    Ok(report)
}

/// Embedding-similarity baseline with the same report format as `cmd_eval`.
pub fn cmd_baseline(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let artifacts = Artifacts::load(cfg, false)?;
    let embedder = build_embedder(&cfg.provider, cfg.base_dir())?;
    let run = run_baseline(
        &artifacts.dataset,
        &artifacts.question,
        &artifacts.option_set,
        &embedder,
        &cfg.provider.embedding_model,
        cfg.provider.parallelism,
    )?;
    let label = cfg.label.clone().unwrap_or_else(|| {
        format!(
            "{} {}",
            cfg.provider.embedding_model, artifacts.option_set.id
        )
    });
    let report = RunReport::new(
        "baseline",
        &label,
        cfg.echo(),
        artifacts.hashes.clone(),
        &artifacts.question.id,
        &artifacts.option_set,
        run,
        artifacts.notes(true),
    );
    write_report(cfg, &report, &artifacts.option_set)?;
    Ok(report)
}

/// Runs the same generation `k` times and compares canonical answers.
pub fn cmd_consistency(cfg: &RunConfig, k: usize) -> Result<ConsistencyRunReport, CliError> {
    if k < 2 {
        return Err(CliError::Usage(format!("--k must be at least 2, got {k}")));
    }
    let artifacts = Artifacts::load(cfg, true)?;
    let canonicalizer = cfg.canonicalizer.clone().unwrap_or_default();
    let setup = artifacts.setup(cfg, &canonicalizer);

    let chat: Box<dyn ChatProvider> = if cfg.provider.mode == ProviderMode::Replay {
        let cassette = Arc::new(Cassette::load(existing_cassette(
            &cfg.provider,
            cfg.base_dir(),
        )?)?);
        check_depth(&artifacts, &setup, &cassette, k)?;
        Box::new(ReplayChat::new(cassette))
    } else {
        build_chat(&cfg.provider, cfg.base_dir())?
    };

    let mut runs = Vec::with_capacity(k);
    let mut per_run_metrics = Vec::with_capacity(k);
    for i in 0..k {
        let run = run_generation(&artifacts.dataset, &setup, chat.as_ref())?;
        if let Some(f) = run.failures.first() {
            return Err(CliError::Config(format!(
                "run {} failed on clause {}: {}",
                i + 1,
                f.clause_id,
                f.error
            )));
        }
        per_run_metrics.push(caf_core::compute_metrics(
            &run.records,
            &artifacts.option_set,
        ));
        runs.push(run.records);
    }
    let report = ConsistencyRunReport {
        label: cfg
            .label
            .clone()
            .unwrap_or_else(|| format!("{} {} x{k}", setup.template.id, artifacts.option_set.id)),
        config: cfg.echo(),
        artifacts: artifacts.hashes.clone(),
        consistency: consistency(&runs)?,
        per_run_metrics,
    };
    if let Some(out) = &cfg.output_path {
        write_file(&cfg.resolve(out), &report.to_json())?;
    }
    Ok(report)
}

fn check_depth(
    artifacts: &Artifacts,
    setup: &GenerationSetup<'_>,
    cassette: &Cassette,
    k: usize,
) -> Result<(), CliError> {
    for clause in artifacts.dataset.clauses() {
        let conversation = setup
            .conversation(clause, &artifacts.dataset)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let fp = fingerprint(&setup.request(&conversation));
        let have = cassette.responses(&fp).len();
        if have < k {
            return Err(CliError::Config(format!(
                "cassette holds {have} recorded responses for clause {} (fingerprint {fp}), {k} needed",
                clause.id
            )));
        }
    }
    Ok(())
}
