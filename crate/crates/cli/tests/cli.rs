mod common;

use std::process::Command;

use caf_cli::config::{ProviderMode, RecordSource};
use caf_cli::runner::{cmd_baseline, cmd_consistency, cmd_eval};
use caf_cli::{CliError, RunConfig};
use common::*;

fn caf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_caf"))
}

#[test]
fn replay_eval_matches_committed_report() {
    let report = cmd_eval(&replay_config()).unwrap();
    let expected = std::fs::read_to_string(expected_report()).unwrap();
    assert_eq!(report.to_json(), expected);
    assert_eq!(report.metrics.total, 10);
    assert!(report.failures.is_empty());
}

#[test]
fn eval_writes_json_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = replay_config();
    cfg.output_path = Some(dir.path().join("out/report.json"));
    let report = cmd_eval(&cfg).unwrap();
    let json = std::fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    let table = std::fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert_eq!(json, report.to_json());
    assert!(table.lines().next().unwrap().contains("1 (2)"));
    assert!(table.contains("0.60"));
}

#[test]
fn report_embeds_config_and_hashes() {
    let report = cmd_eval(&replay_config()).unwrap();
    assert_eq!(report.config["template_id"], "P1");
    assert_eq!(report.config["provider"]["mode"], "replay");
    let kinds: Vec<&str> = report.artifacts.iter().map(|a| a.kind.as_str()).collect();
    for kind in [
        "dataset",
        "template",
        "option_set",
        "synonym_table",
        "cassette",
    ] {
        assert!(kinds.contains(&kind), "{kind} missing from {kinds:?}");
    }
    let cassette = report
        .artifacts
        .iter()
        .find(|a| a.kind == "cassette")
        .unwrap();
    assert_eq!(
        cassette.sha256,
        caf_core::report::file_sha256(bundled_cassette()).unwrap()
    );
}

#[test]
fn mock_echoing_first_option_concentrates_on_it() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(&script, r#"{"default": "Landlord indemnifies Tenant"}"#).unwrap();
    let mut cfg = config("small_p1_s1_mock.json");
    cfg.provider.mock_script = Some(script);
    let report = cmd_eval(&cfg).unwrap();
    let m = &report.metrics;
    assert_eq!(
        m.correct,
        report.gold_distribution["landlord_indemnifies_tenant"]
    );
    assert_eq!(
        m.per_option_correct["landlord_indemnifies_tenant"],
        m.correct
    );
    assert!(m
        .per_option_correct
        .iter()
        .filter(|(k, _)| *k != "landlord_indemnifies_tenant")
        .all(|(_, v)| *v == 0));
    assert_eq!(m.unique_raw_responses, 1);
}

#[test]
fn missing_cassette_names_the_path() {
    let mut cfg = replay_config();
    cfg.provider.cassette_path = Some("/no/such/cassette.jsonl".into());
    let err = cmd_eval(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("/no/such/cassette.jsonl"));
    assert_ne!(err.exit_code(), 0);

    let mut base = config("small_baseline_mock.json");
    base.provider.mode = ProviderMode::Replay;
    base.provider.cassette_path = Some("/no/such/embeddings.jsonl".into());
    assert!(cmd_baseline(&base)
        .unwrap_err()
        .to_string()
        .contains("/no/such/embeddings.jsonl"));
}

#[test]
fn binary_exit_codes() {
    let cfg = assets().join("configs/small_p1_s1_replay.json");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let ok = caf()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        std::fs::read_to_string(expected_report()).unwrap()
    );

    let missing = caf()
        .args(["eval", "--config"])
        .arg(&cfg)
        .args(["--cassette", "/no/such/cassette.jsonl"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/no/such/cassette.jsonl"));

    let k1 = caf()
        .args(["consistency", "--k", "1", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(k1.status.code(), Some(2));
}

#[test]
fn consistency_requires_two_runs() {
    assert!(matches!(
        cmd_consistency(&replay_config(), 1),
        Err(CliError::Usage(_))
    ));
    assert!(matches!(
        cmd_consistency(&replay_config(), 0),
        Err(CliError::Usage(_))
    ));
}

#[test]
fn consistency_rejects_shallow_cassette() {
    let err = cmd_consistency(&replay_config(), 6).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("5 recorded responses"), "{msg}");
    assert!(msg.contains("6 needed"), "{msg}");
}

#[test]
fn perturbed_cassette_changes_one_clause() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = replay_config();
    cfg.provider.cassette_path = Some(perturbed_cassette(dir.path()));
    let report = cmd_consistency(&cfg, 5).unwrap();
    assert_eq!(
        report
            .consistency
            .changed_clauses
            .iter()
            .collect::<Vec<_>>(),
        vec!["IND-S-002"]
    );
    assert_eq!(report.per_run_metrics.len(), 5);
}

#[test]
fn record_then_replay_reproduces_mock_results() {
    let dir = tempfile::tempdir().unwrap();
    let cassette = dir.path().join("rec.jsonl");
    let mut rec = config("small_p1_s1_record_mock.json");
    rec.provider.cassette_path = Some(cassette.clone());
    let recorded = cmd_eval(&rec).unwrap();

    let mut replay = replay_config();
    replay.provider.cassette_path = Some(cassette.clone());
    let replayed = cmd_eval(&replay).unwrap();
    assert_eq!(recorded.records, replayed.records);

    // A second recording appends deeper entries instead of overwriting.
    cmd_eval(&rec).unwrap();
    let cassette_data = caf_core::providers::Cassette::load(&cassette).unwrap();
    assert_eq!(cassette_data.min_chat_depth(), 2);
}

#[test]
fn baseline_reports_share_the_generation_format() {
    let a = cmd_baseline(&config("small_baseline_mock.json")).unwrap();
    let b = cmd_baseline(&config("small_baseline_mock.json")).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.kind, "baseline");
    let g = cmd_eval(&replay_config()).unwrap();
    assert_eq!(a.gold_distribution, g.gold_distribution);
    assert_eq!(
        a.metrics.per_option_correct.keys().collect::<Vec<_>>(),
        g.metrics.per_option_correct.keys().collect::<Vec<_>>()
    );
    assert!(a
        .scoring_notes
        .iter()
        .any(|n| n == caf_core::report::BASELINE_NOTE));
}

#[test]
fn baseline_record_and_replay_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = config("small_baseline_mock.json");
    rec.provider.mode = ProviderMode::Record;
    rec.provider.record_source = RecordSource::Mock;
    rec.provider.cassette_path = Some(dir.path().join("emb.jsonl"));
    let recorded = cmd_baseline(&rec).unwrap();
    let mut replay = rec.clone();
    replay.provider.mode = ProviderMode::Replay;
    let replayed = cmd_baseline(&replay).unwrap();
    assert_eq!(recorded.records, replayed.records);
}

#[test]
fn config_errors_are_reported_before_running() {
    let mut cfg = replay_config();
    cfg.template_id = None;
    assert!(matches!(cmd_eval(&cfg), Err(CliError::Config(_))));

    let mut cfg = replay_config();
    cfg.option_set_id = "T1".into();
    let err = cmd_eval(&cfg).unwrap_err();
    assert!(
        err.to_string().contains("labelled for question indemnity"),
        "{err}"
    );

    let mut cfg = replay_config();
    cfg.option_set_id = "S9".into();
    assert_eq!(cmd_eval(&cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn example_seeding_uses_the_example_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(&script, r#"{"default": "Tenant indemnifies Landlord"}"#).unwrap();
    let mut cfg: RunConfig = config("small_p1_s1_mock.json");
    cfg.provider.mock_script = Some(script);
    cfg.example_set_ids = vec!["E1".into()];
    cfg.example_corpus = Some("indemnity_examples".into());
    let report = cmd_eval(&cfg).unwrap();
    assert!(report
        .artifacts
        .iter()
        .any(|a| a.kind == "example_set" && a.id == "E1"));
    assert!(report.artifacts.iter().any(|a| a.kind == "example_corpus"));
    assert_eq!(report.metrics.total, 10);

    cfg.example_corpus = None;
    let err = cmd_eval(&cfg).unwrap_err();
    assert!(err.to_string().contains("EX-IND"), "{err}");
}
