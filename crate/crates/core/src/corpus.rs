//! Clause datasets, questions and gold labels.
//!
//! A dataset file is JSON Lines. The first non-blank line must be a manifest
//! record; clause and label records follow in any order:
//!
//! ```text
//! {"kind":"manifest","question_id":"indemnity","max_chars":20000}
//! {"kind":"clause","id":"c1","clause_type":"environmental indemnity","text":"...","source":null}
//! {"kind":"label","clause_id":"c1","question_id":"indemnity","option_ids":["tenant_to_landlord"],"insufficient":false}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_CHARS: usize = 20_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: the first record must be a manifest")]
    MissingManifest { line: usize },
    #[error("line {line}: only one manifest record is allowed")]
    DuplicateManifest { line: usize },
    #[error("clause id must be non-empty")]
    EmptyClauseId,
    #[error("clause {clause_id} has empty text")]
    EmptyText { clause_id: String },
    #[error("clause {clause_id} is {chars} characters long; the limit is below {max_chars}")]
    ClauseTooLong {
        clause_id: String,
        chars: usize,
        max_chars: usize,
    },
    #[error("duplicate clause id {0}")]
    DuplicateClause(String),
    #[error("label for question {question_id} references unknown clause {clause_id}")]
    DanglingLabel {
        clause_id: String,
        question_id: String,
    },
    #[error("duplicate label for clause {clause_id} and question {question_id}")]
    DuplicateLabel {
        clause_id: String,
        question_id: String,
    },
    #[error("max_chars must be positive")]
    ZeroMaxChars,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub id: String,
    pub clause_type: String,
    pub text: String,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionMode {
    SingleSelect,
    MultiSelect,
}

impl fmt::Display for QuestionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionMode::SingleSelect => f.write_str("single_select"),
            QuestionMode::MultiSelect => f.write_str("multi_select"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub mode: QuestionMode,
    pub option_set_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub clause_id: String,
    pub question_id: String,
    #[serde(default)]
    pub option_ids: BTreeSet<String>,
    #[serde(default)]
    pub insufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub question_id: String,
    #[serde(default = "default_max_chars")]
    pub max_chars: usize,
    /// Declared number of labels per option id, when the file ships one.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_distribution: BTreeMap<String, usize>,
}

fn default_max_chars() -> usize {
    DEFAULT_MAX_CHARS
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            question_id: String::new(),
            max_chars: DEFAULT_MAX_CHARS,
            label_distribution: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Manifest(Manifest),
    Clause(Clause),
    Label(GoldLabel),
}

/// An immutable, validated clause corpus with its gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    manifest: Manifest,
    clauses: Vec<Clause>,
    labels: Vec<GoldLabel>,
    clause_index: HashMap<String, usize>,
    label_index: HashMap<(String, String), usize>,
}

impl Dataset {
    pub fn new(
        manifest: Manifest,
        clauses: Vec<Clause>,
        labels: Vec<GoldLabel>,
    ) -> Result<Self, CorpusError> {
        if manifest.max_chars == 0 {
            return Err(CorpusError::ZeroMaxChars);
        }
        let mut clause_index = HashMap::with_capacity(clauses.len());
        for (i, clause) in clauses.iter().enumerate() {
            if clause.id.is_empty() {
                return Err(CorpusError::EmptyClauseId);
            }
            if clause.text.is_empty() {
                return Err(CorpusError::EmptyText {
                    clause_id: clause.id.clone(),
                });
            }
            let chars = clause.text.chars().count();
            if chars >= manifest.max_chars {
                return Err(CorpusError::ClauseTooLong {
                    clause_id: clause.id.clone(),
                    chars,
                    max_chars: manifest.max_chars,
                });
            }
            if clause_index.insert(clause.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateClause(clause.id.clone()));
            }
        }
        let mut label_index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if !clause_index.contains_key(&label.clause_id) {
                return Err(CorpusError::DanglingLabel {
                    clause_id: label.clause_id.clone(),
                    question_id: label.question_id.clone(),
                });
            }
            let key = (label.clause_id.clone(), label.question_id.clone());
            if label_index.insert(key, i).is_some() {
                return Err(CorpusError::DuplicateLabel {
                    clause_id: label.clause_id.clone(),
                    question_id: label.question_id.clone(),
                });
            }
        }
        Ok(Self {
            manifest,
            clauses,
            labels,
            clause_index,
            label_index,
        })
    }

    /// Loads a dataset using the limit declared in its manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, None)
    }

    /// Parses JSON Lines text. `max_chars`, when given, overrides the manifest.
    pub fn parse(text: &str, max_chars: Option<usize>) -> Result<Self, CorpusError> {
        let mut manifest: Option<Manifest> = None;
        let mut clauses = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            match record {
                Record::Manifest(m) => {
                    if manifest.is_some() {
                        return Err(CorpusError::DuplicateManifest { line: line_no });
                    }
                    manifest = Some(m);
                }
                _ if manifest.is_none() => {
                    return Err(CorpusError::MissingManifest { line: line_no });
                }
                Record::Clause(c) => clauses.push(c),
                Record::Label(l) => labels.push(l),
            }
        }
        let mut manifest = manifest.unwrap_or_default();
        if let Some(limit) = max_chars {
            manifest.max_chars = limit;
        }
        Self::new(manifest, clauses, labels)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |record: &Record| {
            // Records contain only strings, bools and integers.
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        };
        push(&Record::Manifest(self.manifest.clone()));
        for clause in &self.clauses {
            push(&Record::Clause(clause.clone()));
        }
        for label in &self.labels {
            push(&Record::Label(label.clone()));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn question_id(&self) -> &str {
        &self.manifest.question_id
    }

    pub fn max_chars(&self) -> usize {
        self.manifest.max_chars
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn labels(&self) -> &[GoldLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn clause(&self, id: &str) -> Option<&Clause> {
        self.clause_index.get(id).map(|&i| &self.clauses[i])
    }

    pub fn label(&self, clause_id: &str, question_id: &str) -> Option<&GoldLabel> {
        self.label_index
            .get(&(clause_id.to_string(), question_id.to_string()))
            .map(|&i| &self.labels[i])
    }

    pub fn labels_for<'a>(&'a self, question_id: &'a str) -> impl Iterator<Item = &'a GoldLabel> {
        self.labels
            .iter()
            .filter(move |l| l.question_id == question_id)
    }

    /// Number of labels per option id for `question_id`.
    pub fn label_counts(&self, question_id: &str) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for label in self.labels_for(question_id) {
            for id in &label.option_ids {
                *counts.entry(id.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// A new dataset restricted to the given clause ids, in dataset order.
    pub fn subset(&self, ids: &[String]) -> Result<Self, CorpusError> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        for id in &wanted {
            if !self.clause_index.contains_key(*id) {
                return Err(CorpusError::DanglingLabel {
                    clause_id: (*id).to_string(),
                    question_id: self.manifest.question_id.clone(),
                });
            }
        }
        let clauses = self
            .clauses
            .iter()
            .filter(|c| wanted.contains(c.id.as_str()))
            .cloned()
            .collect();
        let labels = self
            .labels
            .iter()
            .filter(|l| wanted.contains(l.clause_id.as_str()))
            .cloned()
            .collect();
        Self::new(self.manifest.clone(), clauses, labels)
    }
}

/// Loads a dataset, validating every clause against `max_chars` instead of the
/// manifest's limit.
pub fn load_dataset(path: impl AsRef<Path>, max_chars: usize) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Dataset::parse(&text, Some(max_chars))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// A single-select label that is answerable but does not name exactly one option.
    SingleArity,
    /// A multi-select label that is answerable but names no options.
    EmptyMulti,
    /// An insufficient-information label that still names options.
    InsufficientWithOptions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldViolation {
    pub clause_id: String,
    pub kind: ViolationKind,
}

/// Checks every label for `question` against the arity rules of its mode.
pub fn validate_gold(dataset: &Dataset, question: &Question) -> Vec<GoldViolation> {
    let mut out = Vec::new();
    for label in dataset.labels_for(&question.id) {
        let kind = if label.insufficient {
            (!label.option_ids.is_empty()).then_some(ViolationKind::InsufficientWithOptions)
        } else {
            match question.mode {
                QuestionMode::SingleSelect if label.option_ids.len() != 1 => {
                    Some(ViolationKind::SingleArity)
                }
                QuestionMode::MultiSelect if label.option_ids.is_empty() => {
                    Some(ViolationKind::EmptyMulti)
                }
                _ => None,
            }
        };
        if let Some(kind) = kind {
            out.push(GoldViolation {
                clause_id: label.clause_id.clone(),
                kind,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_line() -> &'static str {
        r#"{"kind":"manifest","question_id":"q","max_chars":20000}"#
    }

    fn clause(id: &str, text: &str) -> Clause {
        Clause {
            id: id.into(),
            clause_type: "environmental indemnity".into(),
            text: text.into(),
            source: None,
        }
    }

    fn label(clause_id: &str, ids: &[&str], insufficient: bool) -> GoldLabel {
        GoldLabel {
            clause_id: clause_id.into(),
            question_id: "q".into(),
            option_ids: ids.iter().map(|s| s.to_string()).collect(),
            insufficient,
        }
    }

    fn question(mode: QuestionMode) -> Question {
        Question {
            id: "q".into(),
            text: "who indemnifies whom?".into(),
            mode,
            option_set_id: "S1".into(),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let ds = Dataset::parse("", None).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(ds.labels().len(), 0);
        let ds = Dataset::parse("\n\n", None).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn manifest_must_lead() {
        let text = r#"{"kind":"clause","id":"a","clause_type":"t","text":"x"}"#;
        assert!(matches!(
            Dataset::parse(text, None),
            Err(CorpusError::MissingManifest { line: 1 })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", manifest_line());
        match Dataset::parse(&text, None) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn over_length_clause_names_its_id() {
        let long = "x".repeat(25_000);
        let text = format!(
            "{}\n{}\n",
            manifest_line(),
            serde_json::json!({"kind":"clause","id":"too-long","clause_type":"t","text":long})
        );
        let err = Dataset::parse(&text, Some(20_000)).unwrap_err();
        assert!(err.to_string().contains("too-long"), "{err}");
    }

    #[test]
    fn length_boundary() {
        let manifest = Manifest::default();
        let ok = clause("ok", &"a".repeat(DEFAULT_MAX_CHARS - 1));
        assert!(Dataset::new(manifest.clone(), vec![ok], vec![]).is_ok());
        let bad = clause("bad", &"a".repeat(DEFAULT_MAX_CHARS));
        assert!(matches!(
            Dataset::new(manifest, vec![bad], vec![]),
            Err(CorpusError::ClauseTooLong { .. })
        ));
    }

    #[test]
    fn length_counts_characters_not_bytes() {
        let manifest = Manifest {
            max_chars: 5,
            ..Manifest::default()
        };
        // four characters, twelve bytes
        let c = clause("u", "éèêë");
        assert!(Dataset::new(manifest, vec![c], vec![]).is_ok());
    }

    #[test]
    fn dangling_and_duplicate_labels_rejected() {
        let m = Manifest::default();
        let err = Dataset::new(
            m.clone(),
            vec![clause("a", "t")],
            vec![label("b", &["x"], false)],
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::DanglingLabel { .. }));
        let err = Dataset::new(
            m.clone(),
            vec![clause("a", "t")],
            vec![label("a", &["x"], false), label("a", &["y"], false)],
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateLabel { .. }));
        let err = Dataset::new(m, vec![clause("a", "t"), clause("a", "u")], vec![]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateClause(_)));
    }

    #[test]
    fn empty_id_and_text_rejected() {
        let m = Manifest::default();
        assert!(matches!(
            Dataset::new(m.clone(), vec![clause("", "t")], vec![]),
            Err(CorpusError::EmptyClauseId)
        ));
        assert!(matches!(
            Dataset::new(m, vec![clause("a", "")], vec![]),
            Err(CorpusError::EmptyText { .. })
        ));
    }

    #[test]
    fn gold_violations() {
        let clauses = vec![clause("a", "t"), clause("b", "t"), clause("c", "t")];
        let labels = vec![
            label("a", &["x", "y"], false),
            label("b", &["x"], true),
            label("c", &["x"], false),
        ];
        let ds = Dataset::new(Manifest::default(), clauses, labels).unwrap();
        let v = validate_gold(&ds, &question(QuestionMode::SingleSelect));
        assert_eq!(
            v,
            vec![
                GoldViolation {
                    clause_id: "a".into(),
                    kind: ViolationKind::SingleArity
                },
                GoldViolation {
                    clause_id: "b".into(),
                    kind: ViolationKind::InsufficientWithOptions
                },
            ]
        );
        // Multi-select accepts two ids, still rejects the insufficient one.
        let v = validate_gold(&ds, &question(QuestionMode::MultiSelect));
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn valid_fixture_has_no_violations() {
        let clauses = vec![clause("a", "t"), clause("b", "t"), clause("c", "t")];
        let labels = vec![
            label("a", &["x"], false),
            label("b", &[], true),
            label("c", &["y"], false),
        ];
        let ds = Dataset::new(Manifest::default(), clauses, labels).unwrap();
        assert!(validate_gold(&ds, &question(QuestionMode::SingleSelect)).is_empty());
        let empty_multi = Dataset::new(
            Manifest::default(),
            vec![clause("a", "t")],
            vec![label("a", &[], false)],
        )
        .unwrap();
        assert_eq!(
            validate_gold(&empty_multi, &question(QuestionMode::MultiSelect))[0].kind,
            ViolationKind::EmptyMulti
        );
    }

    #[test]
    fn subset_keeps_order_and_labels() {
        let clauses = vec![clause("a", "t"), clause("b", "t"), clause("c", "t")];
        let labels = vec![label("a", &["x"], false), label("c", &["y"], false)];
        let ds = Dataset::new(Manifest::default(), clauses, labels).unwrap();
        let sub = ds.subset(&["c".into(), "a".into()]).unwrap();
        let ids: Vec<_> = sub.clauses().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(sub.labels().len(), 2);
        assert!(ds.subset(&["zz".into()]).is_err());
    }
}
