//! `result.csv` and `manifest.json` writers.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::commands::Table;
use crate::config::ExperimentConfig;

/// Fields of the manifest that legitimately differ between identical runs.
pub const VOLATILE_MANIFEST_KEYS: [&str; 1] = ["wall_time_seconds"];

/// CSV text: a fingerprint comment line, the header, then one line per row.
pub fn csv(table: &Table, fingerprint: &str) -> String {
    let mut s = format!("# config_fingerprint: {fingerprint}\n");
    s.push_str(&table.header.join(","));
    s.push('\n');
    for row in &table.rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn manifest(subcommand: &str, cfg: &ExperimentConfig, table: &Table, asserted: bool, wall: f64) -> Value {
    json!({
        "subcommand": subcommand,
        "config_fingerprint": cfg.fingerprint(),
        "config": cfg.canonical_entries(),
        "versions": {
            "jumptime": jumptime::VERSION,
            "jumptime-cli": env!("CARGO_PKG_VERSION"),
        },
        "rng": "ChaCha8, stream (seed, path)",
        "reduction": "path_order",
        "rows": table.rows.len(),
        "summary": table.summary,
        "check_passed": table.passed,
        "assert_mode": asserted,
        "wall_time_seconds": wall,
    })
}

pub fn write(dir: &Path, csv_text: &str, manifest: &Value) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("result.csv"), csv_text)?;
    let mut text = serde_json::to_string_pretty(manifest).expect("json values serialize");
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)
}
