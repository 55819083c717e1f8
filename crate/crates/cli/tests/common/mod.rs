#![allow(dead_code)]

use std::path::{Path, PathBuf};

use caf_cli::RunConfig;

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn assets() -> PathBuf {
    root().join("assets")
}

pub fn config(name: &str) -> RunConfig {
    RunConfig::load(assets().join("configs").join(name)).expect("bundled config loads")
}

pub fn replay_config() -> RunConfig {
    config("small_p1_s1_replay.json")
}

pub fn bundled_cassette() -> PathBuf {
    assets().join("cassettes/indemnity_small_P1_S1.jsonl")
}

pub fn expected_report() -> PathBuf {
    assets().join("expected/indemnity_small_P1_S1.json")
}

/// Copies the bundled cassette into `dir`, changing the third recorded
/// response for the first clause answered "Tenant indemnifies Landlord.".
/// Returns the new cassette path.
pub fn perturbed_cassette(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(bundled_cassette()).unwrap();
    let mut entries: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let target = entries
        .iter()
        .find(|e| e["response"]["text"] == "Tenant indemnifies Landlord.")
        .map(|e| e["fingerprint"].clone())
        .expect("cassette has a tenant answer");
    let entry = entries
        .iter_mut()
        .find(|e| e["fingerprint"] == target && e["index"] == 2)
        .expect("cassette is five deep");
    entry["response"]["text"] = "Landlord indemnifies Tenant.".into();
    let out = dir.join("perturbed.jsonl");
    let body: String = entries.iter().map(|e| format!("{e}\n")).collect();
    std::fs::write(&out, body).unwrap();
    out
}
