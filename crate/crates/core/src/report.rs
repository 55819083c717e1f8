//! Run reports: machine-readable JSON plus a plain-text results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{compute_metrics, ConsistencyReport, EvalRecord, EvalRun, Metrics, RunFailure};
use crate::templating::OptionSet;

pub const ESCAPE_SCORING_NOTE: &str =
    "escape answers count as correct only when the gold label marks the clause as insufficient";
pub const LENIENT_SCORING_NOTE: &str =
    "multi-select answers count as correct when they include at least one gold option";
pub const BASELINE_NOTE: &str =
    "the similarity baseline always predicts exactly one option (argmax cosine, lowest ordinal on ties)";

pub fn file_sha256(path: impl AsRef<Path>) -> io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Content hash of an input, so a report pins exactly what it ran on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub kind: String,
    pub id: String,
    pub sha256: String,
}

impl ArtifactHash {
    pub fn of_file(kind: &str, id: &str, path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            id: id.to_string(),
            sha256: file_sha256(path)?,
        })
    }
}

/// Number of gold labels per option id, plus insufficient clauses under
/// the key `"insufficient"` when there are any.
pub fn gold_distribution(
    records: &[EvalRecord],
    option_set: &OptionSet,
) -> BTreeMap<String, usize> {
    let mut dist: BTreeMap<String, usize> = option_set
        .canonical_ids()
        .map(|id| (id.to_string(), 0))
        .collect();
    let mut insufficient = 0;
    for r in records {
        if r.gold.insufficient {
            insufficient += 1;
        }
        for id in &r.gold.option_ids {
            *dist.entry(id.clone()).or_insert(0) += 1;
        }
    }
    if insufficient > 0 {
        dist.insert("insufficient".into(), insufficient);
    }
    dist
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: String,
    pub label: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<ArtifactHash>,
    pub question_id: String,
    pub option_set_id: String,
    pub metrics: Metrics,
    pub gold_distribution: BTreeMap<String, usize>,
    pub scoring_notes: Vec<String>,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<RunFailure>,
}

impl RunReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: &str,
        label: &str,
        config: serde_json::Value,
        artifacts: Vec<ArtifactHash>,
        question_id: &str,
        option_set: &OptionSet,
        run: EvalRun,
        scoring_notes: Vec<String>,
    ) -> Self {
        Self {
            kind: kind.to_string(),
            label: label.to_string(),
            config,
            artifacts,
            question_id: question_id.to_string(),
            option_set_id: option_set.id.clone(),
            metrics: compute_metrics(&run.records, option_set),
            gold_distribution: gold_distribution(&run.records, option_set),
            scoring_notes,
            records: run.records,
            failures: run.failures,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self, option_set: &OptionSet) -> String {
        render_table(
            option_set,
            &self.gold_distribution,
            &[(self.label.as_str(), &self.metrics)],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRunReport {
    pub label: String,
    pub config: serde_json::Value,
    pub artifacts: Vec<ArtifactHash>,
    pub consistency: ConsistencyReport,
    pub per_run_metrics: Vec<Metrics>,
}

impl ConsistencyRunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Results table: one column per option headed `ordinal (gold count)`,
/// then accuracy to two places.
///
/// ```text
///            | 1 (6) | 2 (71) | 3 (39) | 4 (5) | A
/// P1 S1      |     6 |     60 |     23 |     1 | 0.74
/// ```
pub fn render_table(
    option_set: &OptionSet,
    gold: &BTreeMap<String, usize>,
    rows: &[(&str, &Metrics)],
) -> String {
    let mut headers: Vec<String> = option_set
        .options()
        .iter()
        .map(|o| {
            format!(
                "{} ({})",
                o.ordinal,
                gold.get(&o.canonical_id).copied().unwrap_or(0)
            )
        })
        .collect();
    let insufficient = gold.get("insufficient").copied();
    if let Some(n) = insufficient {
        headers.push(format!("esc ({n})"));
    }
    headers.push("A".into());

    let body: Vec<(String, Vec<String>)> = rows
        .iter()
        .map(|(label, m)| {
            let mut cells: Vec<String> = option_set
                .options()
                .iter()
                .map(|o| {
                    m.per_option_correct
                        .get(&o.canonical_id)
                        .copied()
                        .unwrap_or(0)
                        .to_string()
                })
                .collect();
            if insufficient.is_some() {
                cells.push(m.escape_count.to_string());
            }
            cells.push(format!("{:.2}", m.accuracy));
            (label.to_string(), cells)
        })
        .collect();

    let label_width = body.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(1);
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| {
            body.iter()
                .map(|(_, c)| c[i].len())
                .chain([h.len()])
                .max()
                .unwrap_or(1)
        })
        .collect();

    let mut out = String::new();
    let _ = write!(out, "{:label_width$}", "");
    for (h, w) in headers.iter().zip(&widths) {
        let _ = write!(out, " | {h:>w$}");
    }
    out.push('\n');
    for (label, cells) in &body {
        let _ = write!(out, "{label:label_width$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, " | {c:>w$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templating::AnswerOption;

    #[test]
    fn table_layout() {
        let set = OptionSet::new(
            "S1",
            "q",
            ["a", "b", "c", "d"]
                .iter()
                .map(|id| AnswerOption::new(*id, format!("text {id}")))
                .collect(),
        )
        .unwrap();
        let gold: BTreeMap<String, usize> = [("a", 6), ("b", 71), ("c", 39), ("d", 5)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let metrics = Metrics {
            total: 121,
            correct: 90,
            accuracy: 90.0 / 121.0,
            per_option_correct: [("a", 6), ("b", 60), ("c", 23), ("d", 1)]
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            unmapped_count: 0,
            escape_count: 0,
            cleanup_count: 0,
            unique_raw_responses: 4,
        };
        let t = render_table(&set, &gold, &[("P1", &metrics)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "   | 1 (6) | 2 (71) | 3 (39) | 4 (5) |    A");
        assert_eq!(lines[1], "P1 |     6 |     60 |     23 |     1 | 0.74");
    }
}
