//! Zero-shot baseline: pick the option whose embedding is closest to the
//! clause embedding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::canonicalize::{CanonicalAnswer, MatchStrategy, MatchTrace};
use crate::corpus::{Clause, Dataset, Question};
use crate::eval::{score, EvalRecord, EvalRun, RunFailure};
use crate::pipeline::parallel_map;
use crate::providers::{Embedder, ProviderError};
use crate::templating::OptionSet;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("vectors have different dimensions ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("cosine is undefined for empty vectors")]
    Empty,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, BaselineError> {
    if u.len() != v.len() {
        return Err(BaselineError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if u.is_empty() {
        return Err(BaselineError::Empty);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(BaselineError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPrediction {
    pub clause_id: String,
    pub scores: BTreeMap<String, f64>,
    pub predicted: String,
}

/// Argmax over `(canonical_id, vector)` pairs given in ordinal order. The
/// first of several equal maxima wins.
pub fn argmax_option<'a, I>(
    clause: &[f64],
    options: I,
) -> Result<(String, BTreeMap<String, f64>), BaselineError>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let mut scores = BTreeMap::new();
    let mut best: Option<(&str, f64)> = None;
    for (id, vector) in options {
        let s = cosine(clause, vector)?;
        scores.insert(id.to_string(), s);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    let (id, _) = best.ok_or(BaselineError::Empty)?;
    Ok((id.to_string(), scores))
}

fn option_texts(option_set: &OptionSet) -> Vec<String> {
    option_set
        .options()
        .iter()
        .map(|o| o.text.clone())
        .collect()
}

pub fn predict(
    clause: &Clause,
    option_set: &OptionSet,
    embedder: &Embedder,
    model: &str,
) -> Result<SimilarityPrediction, BaselineError> {
    let option_vectors = embedder.embed(model, &option_texts(option_set))?;
    let clause_vector = embedder.embed_one(model, &clause.text)?;
    let (predicted, scores) = argmax_option(
        clause_vector.values(),
        option_set
            .options()
            .iter()
            .zip(&option_vectors)
            .map(|(o, v)| (o.canonical_id.as_str(), v.values())),
    )?;
    Ok(SimilarityPrediction {
        clause_id: clause.id.clone(),
        scores,
        predicted,
    })
}

/// Predicts every clause and scores it like a generated answer. Clauses whose
/// embedding fails are listed as failures and the run continues.
pub fn run_baseline(
    dataset: &Dataset,
    question: &Question,
    option_set: &OptionSet,
    embedder: &Embedder,
    model: &str,
    parallelism: usize,
) -> Result<EvalRun, BaselineError> {
    if dataset.is_empty() {
        return Ok(EvalRun::default());
    }
    // Warm the cache so the workers never race to embed the options.
    embedder.embed(model, &option_texts(option_set))?;

    let outcomes = parallel_map(dataset.clauses(), parallelism, |clause| {
        let gold = dataset
            .label(&clause.id, &question.id)
            .ok_or_else(|| format!("no gold label for question {}", question.id))?;
        let prediction = predict(clause, option_set, embedder, model).map_err(|e| e.to_string())?;
        let answer = CanonicalAnswer::selected([prediction.predicted.clone()]);
        let correct = score(question, &answer, gold).map_err(|e| e.to_string())?;
        let raw = option_set
            .by_id(&prediction.predicted)
            .map(|o| o.text.clone())
            .unwrap_or_default();
        Ok::<_, String>(EvalRecord {
            clause_id: clause.id.clone(),
            raw,
            answer,
            trace: MatchTrace {
                strategy: MatchStrategy::Exact,
                needed_cleanup: false,
                segments_matched: 0,
            },
            gold: gold.clone(),
            correct,
        })
    });

    let mut run = EvalRun::default();
    for (clause, outcome) in dataset.clauses().iter().zip(outcomes) {
        match outcome {
            Ok(record) => run.records.push(record),
            Err(error) => {
                warn!(clause_id = %clause.id, %error, "baseline prediction failed");
                run.failures.push(RunFailure {
                    clause_id: clause.id.clone(),
                    error,
                });
            }
        }
    }
    Ok(run)
}
