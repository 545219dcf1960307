//! CSV tables with a JSON sidecar recording the config hash and git revision.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{CliError, ExperimentConfig};

/// Hex SHA-256 of the canonical JSON of the effective config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// `git rev-parse HEAD` of the working directory, or `unknown`.
pub fn git_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    command: &'a str,
    file: String,
    rows: usize,
    config_hash: String,
    git_revision: String,
    version: &'a str,
}

/// Sidecar path `<stem>.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Write a header plus rows, then the sidecar.
pub fn write_table(
    cfg: &ExperimentConfig,
    command: &str,
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    let meta = Sidecar {
        command,
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        rows: rows.len(),
        config_hash: config_hash(cfg),
        git_revision: git_revision(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
    std::fs::write(&side, text + "\n").map_err(|e| io_err(&side, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}
