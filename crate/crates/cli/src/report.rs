//! Consolidated summary of an artifacts directory.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::commands::{write_json, ATTACK_SUMMARY, CHECKPOINT, LOSS_TRACE, METRICS, POSTERIOR_SUMMARY, TRAIN_SUMMARY};
use crate::CliError;

pub const REPORT: &str = "report.json";

/// Artifacts every complete train + eval run leaves behind.
pub const REQUIRED: [&str; 6] = [
    "manifest_train.json",
    CHECKPOINT,
    LOSS_TRACE,
    TRAIN_SUMMARY,
    "manifest_eval.json",
    METRICS,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub json: Value,
    pub missing: Vec<String>,
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

/// Merge result JSONs, manifest hashes and file listings of `dir` into
/// `report.json`. Keys are sorted, so unchanged artifacts give identical
/// bytes.
pub fn emit_report(dir: &Path) -> Result<Report, CliError> {
    let mut files: Vec<String> = match fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != REPORT)
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(CliError::Io(format!("{}: {e}", dir.display()))),
    };
    files.sort();
    let missing: Vec<String> = REQUIRED
        .iter()
        .filter(|r| !files.iter().any(|f| f == *r))
        .map(|r| r.to_string())
        .collect();

    let mut results = Map::new();
    for name in [TRAIN_SUMMARY, METRICS, ATTACK_SUMMARY, POSTERIOR_SUMMARY] {
        if files.iter().any(|f| f == name) {
            let key = name.trim_end_matches(".json").to_string();
            results.insert(key, read_json(&dir.join(name))?);
        }
    }
    let mut manifests = Map::new();
    for name in files.iter().filter(|f| f.starts_with("manifest_") && f.ends_with(".json")) {
        let m = read_json(&dir.join(name))?;
        let key = name.trim_start_matches("manifest_").trim_end_matches(".json").to_string();
        manifests.insert(
            key,
            serde_json::json!({
                "config_sha256": m.get("config_sha256").cloned().unwrap_or(Value::Null),
                "seed": m.get("seed").cloned().unwrap_or(Value::Null),
                "version": m.get("version").cloned().unwrap_or(Value::Null),
            }),
        );
    }
    let by_ext = |ext: &str| -> Value {
        Value::Array(
            files
                .iter()
                .filter(|f| f.ends_with(ext))
                .map(|f| Value::String(f.clone()))
                .collect(),
        )
    };

    // Rebuild through a sorted map so key order never depends on insertion.
    let mut out = std::collections::BTreeMap::new();
    out.insert("checkpoints", by_ext(".ckpt"));
    out.insert("csv", by_ext(".csv"));
    out.insert("manifests", Value::Object(manifests));
    out.insert("missing", Value::Array(missing.iter().cloned().map(Value::String).collect()));
    out.insert("results", Value::Object(results));
    let json = serde_json::to_value(out)?;
    if dir.is_dir() {
        write_json(&dir.join(REPORT), &json)?;
    }
    Ok(Report { json, missing })
}
