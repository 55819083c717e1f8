//! Named artifacts bundled with a project: questions, option sets,
//! templates, synonym tables, example sets and datasets.
//!
//! `registry.json` maps ids to files relative to its own directory:
//!
//! ```json
//! {
//!   "questions": [{"id": "indemnity", "text": "...", "mode": "single_select", "option_set_id": "S1"}],
//!   "option_sets": {"S1": "option_sets/S1.json"},
//!   "templates": {"P1": "templates/P1.tmpl"},
//!   "synonym_tables": {"parties": "synonyms/parties.json"},
//!   "example_sets": {"E1": "example_sets/E1.json"},
//!   "datasets": {"indemnity": "datasets/indemnity.jsonl"}
//! }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::canonicalize::{SynonymError, SynonymTable};
use crate::corpus::{CorpusError, Dataset, Question};
use crate::templating::{ExampleSet, OptionSet, PromptTemplate, TemplateError};

pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown {kind} {id:?}")]
    Unknown { kind: &'static str, id: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Synonym(#[from] SynonymError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    questions: Vec<Question>,
    #[serde(default)]
    option_sets: BTreeMap<String, PathBuf>,
    #[serde(default)]
    templates: BTreeMap<String, PathBuf>,
    #[serde(default)]
    synonym_tables: BTreeMap<String, PathBuf>,
    #[serde(default)]
    example_sets: BTreeMap<String, PathBuf>,
    #[serde(default)]
    datasets: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Registry {
    root: PathBuf,
    questions: BTreeMap<String, Question>,
    option_sets: BTreeMap<String, (PathBuf, OptionSet)>,
    templates: BTreeMap<String, (PathBuf, PromptTemplate)>,
    synonym_tables: BTreeMap<String, (PathBuf, SynonymTable)>,
    example_sets: BTreeMap<String, (PathBuf, ExampleSet)>,
    datasets: BTreeMap<String, PathBuf>,
}

fn unknown(kind: &'static str, id: &str) -> RegistryError {
    RegistryError::Unknown {
        kind,
        id: id.to_string(),
    }
}

impl Registry {
    /// Loads `dir/registry.json` and every artifact it names except
    /// datasets, which load on demand.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let root = dir.as_ref().to_path_buf();
        let path = root.join(REGISTRY_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| RegistryError::Io {
            path: path.clone(),
            source,
        })?;
        let file: RegistryFile = serde_json::from_str(&text).map_err(|e| RegistryError::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;

        let resolve = |p: &PathBuf| root.join(p);
        let mut registry = Registry {
            root: root.clone(),
            questions: file
                .questions
                .into_iter()
                .map(|q| (q.id.clone(), q))
                .collect(),
            option_sets: BTreeMap::new(),
            templates: BTreeMap::new(),
            synonym_tables: BTreeMap::new(),
            example_sets: BTreeMap::new(),
            datasets: file
                .datasets
                .iter()
                .map(|(k, v)| (k.clone(), resolve(v)))
                .collect(),
        };
        for (id, rel) in &file.option_sets {
            let p = resolve(rel);
            let set = OptionSet::load(&p)?;
            if &set.id != id {
                return Err(RegistryError::Invalid(format!(
                    "option set file {} declares id {}, registered as {id}",
                    p.display(),
                    set.id
                )));
            }
            registry.option_sets.insert(id.clone(), (p, set));
        }
        for (id, rel) in &file.templates {
            let p = resolve(rel);
            let t = PromptTemplate::load(&p)?;
            if &t.id != id {
                return Err(RegistryError::Invalid(format!(
                    "template file {} declares id {}, registered as {id}",
                    p.display(),
                    t.id
                )));
            }
            registry.templates.insert(id.clone(), (p, t));
        }
        for (id, rel) in &file.synonym_tables {
            let p = resolve(rel);
            let t = SynonymTable::load(&p)?;
            registry.synonym_tables.insert(id.clone(), (p, t));
        }
        for (id, rel) in &file.example_sets {
            let p = resolve(rel);
            let e = ExampleSet::load(&p)?;
            registry.example_sets.insert(id.clone(), (p, e));
        }
        for set in registry.option_sets.values().map(|(_, s)| s) {
            if !registry.questions.contains_key(&set.question_id) {
                return Err(RegistryError::Invalid(format!(
                    "option set {} refers to unknown question {}",
                    set.id, set.question_id
                )));
            }
        }
        Ok(registry)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn questions(&self) -> impl Iterator<Item = &Question> {
        self.questions.values()
    }

    pub fn question(&self, id: &str) -> Result<&Question, RegistryError> {
        self.questions
            .get(id)
            .ok_or_else(|| unknown("question", id))
    }

    pub fn option_sets(&self) -> impl Iterator<Item = &OptionSet> {
        self.option_sets.values().map(|(_, s)| s)
    }

    pub fn option_set(&self, id: &str) -> Result<&OptionSet, RegistryError> {
        self.option_sets
            .get(id)
            .map(|(_, s)| s)
            .ok_or_else(|| unknown("option set", id))
    }

    pub fn option_set_path(&self, id: &str) -> Result<&Path, RegistryError> {
        self.option_sets
            .get(id)
            .map(|(p, _)| p.as_path())
            .ok_or_else(|| unknown("option set", id))
    }

    pub fn templates(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values().map(|(_, t)| t)
    }

    pub fn template(&self, id: &str) -> Result<&PromptTemplate, RegistryError> {
        self.templates
            .get(id)
            .map(|(_, t)| t)
            .ok_or_else(|| unknown("template", id))
    }

    pub fn template_path(&self, id: &str) -> Result<&Path, RegistryError> {
        self.templates
            .get(id)
            .map(|(p, _)| p.as_path())
            .ok_or_else(|| unknown("template", id))
    }

    pub fn synonym_table(&self, id: &str) -> Result<&SynonymTable, RegistryError> {
        self.synonym_tables
            .get(id)
            .map(|(_, t)| t)
            .ok_or_else(|| unknown("synonym table", id))
    }

    pub fn synonym_table_path(&self, id: &str) -> Result<&Path, RegistryError> {
        self.synonym_tables
            .get(id)
            .map(|(p, _)| p.as_path())
            .ok_or_else(|| unknown("synonym table", id))
    }

    /// The synonym table an option set names, if any.
    pub fn synonyms_for(
        &self,
        option_set: &OptionSet,
    ) -> Result<Option<&SynonymTable>, RegistryError> {
        option_set
            .synonym_table_id
            .as_deref()
            .map(|id| self.synonym_table(id))
            .transpose()
    }

    pub fn example_set(&self, id: &str) -> Result<&ExampleSet, RegistryError> {
        self.example_sets
            .get(id)
            .map(|(_, e)| e)
            .ok_or_else(|| unknown("example set", id))
    }

    pub fn example_set_path(&self, id: &str) -> Result<&Path, RegistryError> {
        self.example_sets
            .get(id)
            .map(|(p, _)| p.as_path())
            .ok_or_else(|| unknown("example set", id))
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    pub fn dataset_path(&self, id: &str) -> Result<&Path, RegistryError> {
        self.datasets
            .get(id)
            .map(PathBuf::as_path)
            .ok_or_else(|| unknown("dataset", id))
    }

    pub fn dataset(&self, id: &str) -> Result<Dataset, RegistryError> {
        Ok(Dataset::load(self.dataset_path(id)?)?)
    }
}
