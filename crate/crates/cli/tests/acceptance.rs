//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a gating check fails.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use caf_cli::runner::{cmd_consistency, cmd_eval};
use caf_core::corpus::{Clause, Dataset, GoldLabel};
use caf_core::providers::{OpenAiClient, ScriptedEmbedder};
use caf_core::templating::{AnswerOption, AnswerStyle, Role};
use caf_core::{
    canonicalize, compute_metrics, cosine, predict, render, render_table, score, score_lenient,
    seed_with_examples, CanonicalAnswer, ChatProvider, ChatRequest, Embedder, EvalRecord,
    MatchStrategy, MatchTrace, OptionSet, Registry, SelectionMode,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn registry() -> Result<Registry> {
    Registry::load(assets()).context("bundled registry")
}

fn trace() -> MatchTrace {
    MatchTrace {
        strategy: MatchStrategy::Exact,
        needed_cleanup: false,
        segments_matched: 0,
    }
}

fn gold(clause_id: &str, question: &str, ids: &[&str], insufficient: bool) -> GoldLabel {
    GoldLabel {
        clause_id: clause_id.into(),
        question_id: question.into(),
        option_ids: ids.iter().map(|s| s.to_string()).collect(),
        insufficient,
    }
}

/// A single-select run whose per-option corrects and gold counts are given.
fn synthetic_single(set: &OptionSet, gold_counts: &[usize], corrects: &[usize]) -> Vec<EvalRecord> {
    let ids: Vec<&str> = set.canonical_ids().collect();
    let mut records = Vec::new();
    for (i, (&g, &c)) in gold_counts.iter().zip(corrects).enumerate() {
        for j in 0..g {
            let clause_id = format!("c{i}-{j}");
            let predicted = if j < c {
                ids[i]
            } else {
                ids[(i + 1) % ids.len()]
            };
            let answer = CanonicalAnswer::selected([predicted]);
            let label = gold(&clause_id, &set.question_id, &[ids[i]], false);
            let correct = score_lenient(&answer, &label);
            records.push(EvalRecord {
                clause_id,
                raw: predicted.to_string(),
                answer,
                trace: trace(),
                gold: label,
                correct,
            });
        }
    }
    records
}

fn metric_reconstruction() -> Result<String> {
    let start = Instant::now();
    let reg = registry()?;
    let s1 = reg.option_set("S1")?;
    let gold_counts = [6, 71, 39, 5];
    let mut notes = Vec::new();
    for (corrects, expected) in [
        ([6, 60, 23, 1], 0.7438),
        ([0, 10, 34, 0], 0.3636),
        ([0, 1, 0, 3], 0.0331),
    ] {
        let records = synthetic_single(s1, &gold_counts, &corrects);
        let m = compute_metrics(&records, s1);
        let oracle =
            corrects.iter().sum::<usize>() as f64 / gold_counts.iter().sum::<usize>() as f64;
        ensure!(
            (m.accuracy - oracle).abs() < 1e-12,
            "accuracy {} vs oracle {oracle}",
            m.accuracy
        );
        ensure!(
            (m.accuracy - expected).abs() <= 1e-4,
            "accuracy {} vs {expected}",
            m.accuracy
        );
        let per: Vec<usize> = s1
            .canonical_ids()
            .map(|id| m.per_option_correct[id])
            .collect();
        ensure!(
            per == corrects,
            "per-option corrects {per:?} vs {corrects:?}"
        );
        let dist = caf_core::report::gold_distribution(&records, s1);
        let table = render_table(s1, &dist, &[("row", &m)]);
        ensure!(
            table.contains(&format!("{:.2}", expected)),
            "table lacks rounded accuracy:\n{table}"
        );
        notes.push(format!("{:.4}", m.accuracy));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{} in {elapsed:.2?}", notes.join(", ")))
}

fn lenient_scoring() -> Result<String> {
    let start = Instant::now();
    let reg = registry()?;
    let set = reg.option_set("T2")?;
    let question = reg.question(&set.question_id)?;
    let by_ordinal = |n: usize| set.by_ordinal(n).map(|o| o.canonical_id.as_str()).unwrap();
    let g = gold("x", &question.id, &[by_ordinal(2), by_ordinal(5)], false);
    ensure!(
        score_lenient(&CanonicalAnswer::selected([by_ordinal(2)]), &g),
        "{{2}} vs {{2,5}} should score"
    );
    ensure!(
        !score_lenient(&CanonicalAnswer::selected([by_ordinal(1)]), &g),
        "{{1}} vs {{2,5}} should not score"
    );

    // 143 records: 13 insufficient (answered by escape), 72 overlapping
    // predictions, 58 disjoint ones.
    let mut records = Vec::new();
    for i in 0..143 {
        let clause_id = format!("c{i}");
        let (label, answer) = if i < 13 {
            (
                gold(&clause_id, &question.id, &[], true),
                CanonicalAnswer::Escape,
            )
        } else if i < 85 {
            (
                gold(
                    &clause_id,
                    &question.id,
                    &[by_ordinal(2), by_ordinal(5)],
                    false,
                ),
                CanonicalAnswer::selected([by_ordinal(5), by_ordinal(3)]),
            )
        } else {
            (
                gold(
                    &clause_id,
                    &question.id,
                    &[by_ordinal(2), by_ordinal(5)],
                    false,
                ),
                CanonicalAnswer::selected([by_ordinal(1)]),
            )
        };
        let correct = score(question, &answer, &label)?;
        records.push(EvalRecord {
            clause_id,
            raw: String::new(),
            answer,
            trace: trace(),
            gold: label,
            correct,
        });
    }
    let m = compute_metrics(&records, set);
    ensure!(
        m.correct == 85,
        "{} lenient-correct, expected 85",
        m.correct
    );
    ensure!(
        (m.accuracy - 0.594).abs() <= 1e-3,
        "accuracy {}",
        m.accuracy
    );
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("85/143 = {:.4} in {elapsed:.2?}", m.accuracy))
}

fn canonicalizer_round_trip() -> Result<String> {
    let reg = registry()?;
    let mut checked = 0usize;
    for set in reg.option_sets() {
        let synonyms = reg.synonyms_for(set)?;
        for mode in [SelectionMode::Single, SelectionMode::Multi] {
            for option in set.options() {
                let want = CanonicalAnswer::selected([option.canonical_id.as_str()]);
                for form in option.surface_forms() {
                    let (answer, t) = canonicalize(form, set, &[], synonyms, mode);
                    ensure!(answer == want, "{} {form:?} gave {answer:?}", set.id);
                    ensure!(
                        t.strategy == MatchStrategy::Exact,
                        "{} {form:?} via {:?}",
                        set.id,
                        t.strategy
                    );
                    checked += 1;
                }
                let n = option.ordinal;
                for form in [
                    format!("option {n}"),
                    format!("({n})"),
                    format!("{n}."),
                    format!("{n}"),
                ] {
                    let (answer, t) = canonicalize(&form, set, &[], synonyms, mode);
                    ensure!(answer == want, "{} {form:?} gave {answer:?}", set.id);
                    ensure!(
                        t.strategy == MatchStrategy::Numbered,
                        "{} {form:?} via {:?}",
                        set.id,
                        t.strategy
                    );
                    checked += 1;
                }
            }
        }
    }
    let mut phrases = BTreeSet::new();
    for template in reg.templates() {
        for set in reg.option_sets() {
            for phrase in &template.escape_phrases {
                for raw in [phrase.clone(), format!("{phrase}."), phrase.to_uppercase()] {
                    let (answer, t) = canonicalize(
                        &raw,
                        set,
                        &template.escape_phrases,
                        None,
                        template.selection_mode,
                    );
                    ensure!(
                        answer.is_escape(),
                        "{} {raw:?} gave {answer:?}",
                        template.id
                    );
                    ensure!(
                        t.strategy == MatchStrategy::Escape,
                        "{raw:?} via {:?}",
                        t.strategy
                    );
                    checked += 1;
                }
                phrases.insert(phrase.clone());
            }
        }
    }
    for required in ["The clause is silent", "Unable to determine"] {
        ensure!(
            phrases.contains(required),
            "no bundled template uses {required:?}"
        );
    }
    Ok(format!("{checked} forms, 0 failures"))
}

fn oracle_cosine(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    (dot / (uu * vv).sqrt()).clamp(-1.0, 1.0)
}

fn brute_force_argmax(clause: &[f64], options: &[Vec<f64>]) -> usize {
    let scores: Vec<f64> = options.iter().map(|o| oracle_cosine(clause, o)).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Scores within rounding of the maximum are ties; the first one wins.
    scores.iter().position(|s| best - *s <= 1e-12).unwrap()
}

fn predicted_ordinal(set: &OptionSet, clause: &[f64], options: &[Vec<f64>]) -> Result<usize> {
    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    for (o, v) in set.options().iter().zip(options) {
        vectors.insert(o.text.clone(), v.clone());
    }
    vectors.insert("the clause".into(), clause.to_vec());
    let embedder = Embedder::new(Box::new(ScriptedEmbedder::new(vectors)));
    let c = Clause {
        id: "c".into(),
        clause_type: "t".into(),
        text: "the clause".into(),
        source: None,
    };
    let p = predict(&c, set, &embedder, "scripted")?;
    Ok(set
        .by_id(&p.predicted)
        .context("predicted id in set")?
        .ordinal
        - 1)
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

fn baseline_oracle() -> Result<String> {
    for (u, v, want) in [
        (vec![1.0, 0.0], vec![0.0, 1.0], 0.0),
        (
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            std::f64::consts::FRAC_1_SQRT_2,
        ),
        (
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            32.0 / (14.0f64 * 77.0).sqrt(),
        ),
        (vec![2.0, 0.0, 0.0], vec![-3.0, 0.0, 0.0], -1.0),
    ] {
        let got = cosine(&u, &v)?;
        ensure!(
            (got - want).abs() < 1e-9,
            "cosine({u:?}, {v:?}) = {got}, expected {want}"
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let instances = 500;
    let mut ties = 0;
    for n in 0..instances {
        let dim = rng.random_range(1..=8);
        let k = rng.random_range(2..=6);
        let clause = random_vector(&mut rng, dim);
        let mut options: Vec<Vec<f64>> = (0..k).map(|_| random_vector(&mut rng, dim)).collect();
        if rng.random_bool(0.3) {
            // Force an exact tie by repeating an earlier vector later on.
            let from = rng.random_range(0..k - 1);
            let to = rng.random_range(from + 1..k);
            options[to] = options[from].clone();
            ties += 1;
        }
        for o in &options {
            let got = cosine(&clause, o)?;
            let want = oracle_cosine(&clause, o);
            ensure!(
                (got - want).abs() < 1e-9,
                "instance {n}: cosine {got} vs {want}"
            );
        }
        let set = OptionSet::new(
            "R",
            "q",
            (0..k)
                .map(|i| AnswerOption::new(format!("o{i}"), format!("option text {i}")))
                .collect(),
        )?;
        let expected = brute_force_argmax(&clause, &options);
        let got = predicted_ordinal(&set, &clause, &options)?;
        ensure!(
            got == expected,
            "instance {n}: predicted {got}, brute force {expected}"
        );

        let scale = rng.random_range(0.001..1000.0);
        let scaled_clause: Vec<f64> = clause.iter().map(|x| x * scale).collect();
        let scaled: Vec<Vec<f64>> = options
            .iter()
            .map(|o| {
                let s = rng.random_range(0.001..1000.0);
                o.iter().map(|x| x * s).collect()
            })
            .collect();
        let rescaled = if has_duplicates(&options) {
            // Duplicated options must stay identical to keep the tie exact.
            options
                .iter()
                .map(|o| o.iter().map(|x| x * scale).collect())
                .collect()
        } else {
            scaled
        };
        let after = predicted_ordinal(&set, &scaled_clause, &rescaled)?;
        ensure!(
            after == got,
            "instance {n}: rescaling moved the prediction {got} -> {after}"
        );
    }
    Ok(format!(
        "{instances} instances ({ties} with forced ties), 0 mismatches"
    ))
}

fn has_duplicates(options: &[Vec<f64>]) -> bool {
    options
        .iter()
        .enumerate()
        .any(|(i, a)| options[i + 1..].iter().any(|b| a == b))
}

fn replay_determinism() -> Result<String> {
    let expected = std::fs::read(expected_report())?;
    let dir = tempfile::tempdir()?;
    let mut outputs = Vec::new();
    for i in 0..5 {
        let mut cfg = replay_config();
        let out = dir.path().join(format!("run{i}.json"));
        cfg.output_path = Some(out.clone());
        cmd_eval(&cfg)?;
        outputs.push(std::fs::read(&out)?);
    }
    for (i, o) in outputs.iter().enumerate() {
        ensure!(
            *o == expected,
            "execution {i} differs from the committed report"
        );
    }

    let report = cmd_consistency(&replay_config(), 5)?;
    ensure!(
        report.consistency.stability == 1.0,
        "stability {}",
        report.consistency.stability
    );

    let mut cfg = replay_config();
    cfg.provider.cassette_path = Some(perturbed_cassette(dir.path()));
    let perturbed = cmd_consistency(&cfg, 5)?;
    let changed = perturbed.consistency.changed_clauses.len();
    ensure!(changed == 1, "perturbed cassette changed {changed} clauses");
    Ok(format!(
        "5 identical reports, stability 1.0, perturbed changed {:?}",
        perturbed.consistency.changed_clauses
    ))
}

fn icl_seeding_shape() -> Result<String> {
    let reg = registry()?;
    let template = reg.template("P1")?;
    let set = reg.option_set("S1")?;
    let dataset: Dataset = reg.dataset("indemnity")?;
    let examples = reg.dataset("indemnity_examples")?;
    let e1 = reg.example_set("E1")?.clone();
    let e2 = reg.example_set("E2")?.clone();
    let mut checked = 0;
    for (k, sets) in [(0, vec![]), (4, vec![e1.clone()]), (8, vec![e1, e2])] {
        for clause in dataset.clauses() {
            let base = render(template, set, clause, None)?;
            for style in [AnswerStyle::OptionText, AnswerStyle::Ordinal] {
                let seeded =
                    seed_with_examples(&base, &sets, template, set, &examples, None, style)?;
                let msgs = &seeded.messages;
                ensure!(msgs.len() == 2 * k + 1, "k={k}: {} messages", msgs.len());
                for (i, m) in msgs.iter().enumerate() {
                    let want = if i % 2 == 0 {
                        Role::User
                    } else {
                        Role::Assistant
                    };
                    ensure!(m.role == want, "k={k}: message {i} is {:?}", m.role);
                }
                let last = msgs.last().context("no messages")?;
                ensure!(last.role == Role::User, "k={k}: does not end with user");
                ensure!(
                    last.content == base.messages[0].content,
                    "k={k}: final message changed"
                );
                checked += 1;
            }
        }
    }
    Ok(format!("k in {{0, 4, 8}} over {checked} conversations"))
}

fn corpus_bounds() -> Result<String> {
    let build = |len: usize| {
        let clause = serde_json::json!({"kind": "clause", "id": "c1", "clause_type": "t", "text": "x".repeat(len)});
        format!(
            "{}\n{clause}\n{}\n",
            serde_json::json!({"kind": "manifest", "question_id": "q"}),
            serde_json::json!({"kind": "label", "clause_id": "c1", "question_id": "q", "option_ids": ["a"]})
        )
    };
    match Dataset::parse(&build(20_000), None) {
        Ok(_) => bail!("20,000-character clause accepted"),
        Err(e) => ensure!(e.to_string().contains("20000"), "unexpected error: {e}"),
    }
    let ok = Dataset::parse(&build(19_999), None).context("19,999-character clause rejected")?;
    ensure!(ok.clauses()[0].text.chars().count() == 19_999);
    Ok("20000 rejected, 19999 accepted".into())
}

/// Returns `None` when credentials are absent.
fn live_smoke() -> Result<Option<String>> {
    if std::env::var(caf_core::providers::ENV_API_KEY).map_or(true, |k| k.is_empty()) {
        return Ok(None);
    }
    let reg = registry()?;
    let template = reg.template("P1")?;
    let set = reg.option_set("S1")?;
    let small = reg.dataset("indemnity_small")?;
    let clause = small
        .clause("IND-S-001")
        .context("mutual indemnity clause")?;
    let conv = render(template, set, clause, None)?;
    let client = OpenAiClient::from_env(Duration::from_secs(60))?;
    let model = std::env::var("CAF_MODEL").unwrap_or_else(|_| "gpt-3.5-turbo".into());
    let mut request = ChatRequest::new(model, conv.messages);
    request.temperature = 0.0;
    let response = client.chat_complete(&request)?;
    let (answer, t) = canonicalize(
        &response.text,
        set,
        &template.escape_phrases,
        reg.synonyms_for(set)?,
        template.selection_mode,
    );
    ensure!(
        !answer.is_unmapped(),
        "response {:?} is unmapped",
        response.text
    );
    Ok(Some(format!("{:?} via {:?}", answer, t.strategy)))
}

type Check = fn() -> Result<String>;

fn main() {
    let checks: [(&str, Check); 7] = [
        ("metric reconstruction", metric_reconstruction),
        ("lenient scoring", lenient_scoring),
        ("canonicalizer round-trip", canonicalizer_round_trip),
        ("baseline oracle equivalence", baseline_oracle),
        ("replay determinism", replay_determinism),
        ("ICL seeding shape", icl_seeding_shape),
        ("corpus bounds", corpus_bounds),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e:#}");
            }
        }
    }
    match live_smoke() {
        Ok(Some(detail)) => println!("PASS live smoke: {detail}"),
        Ok(None) => println!("PASS live smoke: skipped, CAF_API_KEY not set (non-gating)"),
        Err(e) => println!("FAIL live smoke (non-gating): {e:#}"),
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
