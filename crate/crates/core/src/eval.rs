//! Scoring canonical answers against gold labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::canonicalize::{CanonicalAnswer, MatchTrace};
use crate::corpus::{GoldLabel, Question, QuestionMode};
use crate::templating::OptionSet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error(
        "gold label for clause {clause_id} belongs to a {actual} question, expected {expected}"
    )]
    ModeMismatch {
        clause_id: String,
        expected: QuestionMode,
        actual: QuestionMode,
    },
    #[error("gold label for clause {clause_id} is for question {actual}, not {expected}")]
    QuestionMismatch {
        clause_id: String,
        expected: String,
        actual: String,
    },
    #[error("consistency needs at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("run {run} covers a different clause set than run 0")]
    ClauseSetMismatch { run: usize },
    #[error("run {run} lists clause {clause_id} more than once")]
    DuplicateClause { run: usize, clause_id: String },
}

/// One scored clause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub clause_id: String,
    pub raw: String,
    pub answer: CanonicalAnswer,
    pub trace: MatchTrace,
    pub gold: GoldLabel,
    pub correct: bool,
}

/// A clause that produced no record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub clause_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRun {
    pub records: Vec<EvalRecord>,
    #[serde(default)]
    pub failures: Vec<RunFailure>,
}

/// Single-select rule: exactly the gold option, or an escape on a clause
/// whose gold says the information is insufficient.
pub fn score_single(answer: &CanonicalAnswer, gold: &GoldLabel) -> bool {
    match answer {
        CanonicalAnswer::Escape => gold.insufficient,
        CanonicalAnswer::Selected { option_ids } => {
            !gold.insufficient && option_ids.len() == 1 && *option_ids == gold.option_ids
        }
        CanonicalAnswer::Unmapped { .. } => false,
    }
}

/// Lenient multi-select rule: at least one predicted option is a gold
/// option, or an escape on an insufficient clause.
pub fn score_lenient(answer: &CanonicalAnswer, gold: &GoldLabel) -> bool {
    match answer {
        CanonicalAnswer::Escape => gold.insufficient,
        CanonicalAnswer::Selected { option_ids } => {
            !gold.insufficient && !option_ids.is_disjoint(&gold.option_ids)
        }
        CanonicalAnswer::Unmapped { .. } => false,
    }
}

/// Scores with the rule matching the question's mode, after checking the
/// gold label belongs to that question.
pub fn score(
    question: &Question,
    answer: &CanonicalAnswer,
    gold: &GoldLabel,
) -> Result<bool, EvalError> {
    if gold.question_id != question.id {
        return Err(EvalError::QuestionMismatch {
            clause_id: gold.clause_id.clone(),
            expected: question.id.clone(),
            actual: gold.question_id.clone(),
        });
    }
    Ok(match question.mode {
        QuestionMode::SingleSelect => score_single(answer, gold),
        QuestionMode::MultiSelect => score_lenient(answer, gold),
    })
}

/// Like [`score`], for callers that know the mode they expect.
pub fn score_as(
    expected: QuestionMode,
    question: &Question,
    answer: &CanonicalAnswer,
    gold: &GoldLabel,
) -> Result<bool, EvalError> {
    if question.mode != expected {
        return Err(EvalError::ModeMismatch {
            clause_id: gold.clause_id.clone(),
            expected,
            actual: question.mode,
        });
    }
    score(question, answer, gold)
}

fn four_places<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    serializer.serialize_f64((value * 10_000.0).round() / 10_000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: usize,
    pub correct: usize,
    #[serde(serialize_with = "four_places")]
    pub accuracy: f64,
    pub per_option_correct: BTreeMap<String, usize>,
    pub unmapped_count: usize,
    pub escape_count: usize,
    pub cleanup_count: usize,
    pub unique_raw_responses: usize,
}

/// Aggregates a run. Every option in `option_set` gets a
/// `per_option_correct` entry, zero included. A correct multi-select record
/// counts once under every gold option, so columns can sum past `correct`.
pub fn compute_metrics(records: &[EvalRecord], option_set: &OptionSet) -> Metrics {
    let mut per_option: BTreeMap<String, usize> = option_set
        .canonical_ids()
        .map(|id| (id.to_string(), 0))
        .collect();
    let mut correct = 0;
    let mut unmapped = 0;
    let mut escapes = 0;
    let mut cleanup = 0;
    let mut raws = HashSet::new();
    for r in records {
        if r.correct {
            correct += 1;
            for id in &r.gold.option_ids {
                *per_option.entry(id.clone()).or_insert(0) += 1;
            }
        }
        match r.answer {
            CanonicalAnswer::Unmapped { .. } => unmapped += 1,
            CanonicalAnswer::Escape => escapes += 1,
            CanonicalAnswer::Selected { .. } => {}
        }
        if r.trace.needed_cleanup {
            cleanup += 1;
        }
        raws.insert(r.raw.as_str());
    }
    let total = records.len();
    Metrics {
        total,
        correct,
        accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        per_option_correct: per_option,
        unmapped_count: unmapped,
        escape_count: escapes,
        cleanup_count: cleanup,
        unique_raw_responses: raws.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub runs: usize,
    pub total: usize,
    pub changed_clauses: BTreeSet<String>,
    #[serde(serialize_with = "four_places")]
    pub stability: f64,
}

/// Compares canonical answers across K reruns of the same clause set.
pub fn consistency(runs: &[Vec<EvalRecord>]) -> Result<ConsistencyReport, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::TooFewRuns(runs.len()));
    }
    let mut maps: Vec<BTreeMap<&str, &CanonicalAnswer>> = Vec::with_capacity(runs.len());
    for (run, records) in runs.iter().enumerate() {
        let mut map = BTreeMap::new();
        for r in records {
            if map.insert(r.clause_id.as_str(), &r.answer).is_some() {
                return Err(EvalError::DuplicateClause {
                    run,
                    clause_id: r.clause_id.clone(),
                });
            }
        }
        maps.push(map);
    }
    let first_ids: Vec<&str> = maps[0].keys().copied().collect();
    for (run, map) in maps.iter().enumerate().skip(1) {
        if !map.keys().copied().eq(first_ids.iter().copied()) {
            return Err(EvalError::ClauseSetMismatch { run });
        }
    }
    let changed: BTreeSet<String> = first_ids
        .iter()
        .filter(|id| maps.iter().skip(1).any(|m| m[*id] != maps[0][*id]))
        .map(|id| id.to_string())
        .collect();
    let total = first_ids.len();
    Ok(ConsistencyReport {
        runs: runs.len(),
        total,
        stability: if total == 0 {
            1.0
        } else {
            1.0 - changed.len() as f64 / total as f64
        },
        changed_clauses: changed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonicalize::MatchStrategy;
    use crate::templating::AnswerOption;

    fn gold(ids: &[&str], insufficient: bool) -> GoldLabel {
        GoldLabel {
            clause_id: "c".into(),
            question_id: "q".into(),
            option_ids: ids.iter().map(|s| s.to_string()).collect(),
            insufficient,
        }
    }

    fn sel(ids: &[&str]) -> CanonicalAnswer {
        CanonicalAnswer::selected(ids.iter().copied())
    }

    fn record(id: &str, answer: CanonicalAnswer, correct: bool) -> EvalRecord {
        EvalRecord {
            clause_id: id.into(),
            raw: format!("{answer:?}"),
            answer,
            trace: MatchTrace {
                strategy: MatchStrategy::Exact,
                needed_cleanup: false,
                segments_matched: 0,
            },
            gold: gold(&["a"], false),
            correct,
        }
    }

    fn options() -> OptionSet {
        OptionSet::new(
            "s",
            "q",
            vec![
                AnswerOption::new("a", "Alpha"),
                AnswerOption::new("b", "Beta"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_rule() {
        assert!(score_single(&sel(&["mutual"]), &gold(&["mutual"], false)));
        assert!(!score_single(
            &sel(&["mutual", "x"]),
            &gold(&["mutual"], false)
        ));
        assert!(!score_single(&sel(&["x"]), &gold(&["mutual"], false)));
        assert!(!score_single(
            &CanonicalAnswer::Unmapped { raw: "?".into() },
            &gold(&["mutual"], false)
        ));
        assert!(score_single(&CanonicalAnswer::Escape, &gold(&[], true)));
        assert!(!score_single(
            &CanonicalAnswer::Escape,
            &gold(&["mutual"], false)
        ));
    }

    #[test]
    fn lenient_rule() {
        assert!(score_lenient(&sel(&["2"]), &gold(&["2", "5"], false)));
        assert!(!score_lenient(&sel(&["1"]), &gold(&["2", "5"], false)));
        assert!(!score_lenient(&sel(&["1", "4"]), &gold(&["2"], false)));
        assert!(score_lenient(&sel(&["2", "5"]), &gold(&["2", "5"], false)));
        assert!(score_lenient(&CanonicalAnswer::Escape, &gold(&[], true)));
        assert!(!score_lenient(&sel(&[]), &gold(&["2"], false)));
    }

    #[test]
    fn mode_and_question_checks() {
        let q = Question {
            id: "q".into(),
            text: "?".into(),
            mode: QuestionMode::MultiSelect,
            option_set_id: "s".into(),
        };
        assert!(matches!(
            score_as(
                QuestionMode::SingleSelect,
                &q,
                &sel(&["a"]),
                &gold(&["a"], false)
            ),
            Err(EvalError::ModeMismatch { .. })
        ));
        let mut other = gold(&["a"], false);
        other.question_id = "other".into();
        assert!(matches!(
            score(&q, &sel(&["a"]), &other),
            Err(EvalError::QuestionMismatch { .. })
        ));
        assert_eq!(score(&q, &sel(&["a", "b"]), &gold(&["a"], false)), Ok(true));
    }

    #[test]
    fn metrics_counts() {
        let mut records = vec![
            record("1", sel(&["a"]), true),
            record("2", sel(&["b"]), false),
            record("3", CanonicalAnswer::Escape, false),
            record("4", CanonicalAnswer::Unmapped { raw: "?".into() }, false),
        ];
        records[1].trace.needed_cleanup = true;
        records[1].raw = records[0].raw.clone();
        let m = compute_metrics(&records, &options());
        assert_eq!(m.total, 4);
        assert_eq!(m.correct, 1);
        assert_eq!(m.accuracy, 0.25);
        assert_eq!(m.per_option_correct["a"], 1);
        assert_eq!(m.per_option_correct["b"], 0);
        assert_eq!(m.escape_count, 1);
        assert_eq!(m.unmapped_count, 1);
        assert_eq!(m.cleanup_count, 1);
        assert_eq!(m.unique_raw_responses, 3);
    }

    #[test]
    fn accuracy_serializes_to_four_places() {
        let records: Vec<EvalRecord> = (0..3)
            .map(|i| record(&i.to_string(), sel(&["a"]), i == 0))
            .collect();
        let m = compute_metrics(&records, &options());
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["accuracy"], serde_json::json!(0.3333));
    }

    #[test]
    fn consistency_reports_changes() {
        let base: Vec<EvalRecord> = ["1", "2", "3"]
            .iter()
            .map(|i| record(i, sel(&["a"]), true))
            .collect();
        let runs = vec![base.clone(); 5];
        let r = consistency(&runs).unwrap();
        assert_eq!(r.stability, 1.0);
        assert!(r.changed_clauses.is_empty());

        let mut flipped = runs.clone();
        flipped[3][1].answer = sel(&["b"]);
        let r = consistency(&flipped).unwrap();
        assert_eq!(r.changed_clauses.iter().collect::<Vec<_>>(), ["2"]);
        assert!((r.stability - 2.0 / 3.0).abs() < 1e-12);

        assert_eq!(consistency(&runs[..1]), Err(EvalError::TooFewRuns(1)));
        let mut short = runs.clone();
        short[2].pop();
        assert_eq!(
            consistency(&short),
            Err(EvalError::ClauseSetMismatch { run: 2 })
        );
    }
}
