//! Shared fixtures for the benchmarks.

use std::path::PathBuf;

use caf_core::Registry;

pub fn assets_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

pub fn registry() -> Registry {
    Registry::load(assets_dir()).expect("bundled registry loads")
}

/// Raw responses in the shapes models tend to produce for the indemnity
/// question.
pub const INDEMNITY_RESPONSES: &[&str] = &[
    "Tenant indemnifies Landlord",
    "2. Tenant indemnifies Landlord.",
    "The clause implies that Lessee indemnifies Lessor.",
    "Option 3",
    "The clause is silent.",
    "Lessor indemnifies Lessee Indemnified Parties. Lessee indemnifies Lessor Indemnified Parties.",
];
