//! Result files and the run manifest.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use qnoise_core::noise::Verdict;

use crate::config::RunConfig;
use crate::experiments::{run_experiment, Metric, RunError};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Everything a run produced. Timestamps live here and nowhere else, so the
/// data files are byte-identical across reruns.
#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub kind: String,
    pub config_hash: String,
    pub artifact_version: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub verdict: Verdict,
    pub summary: String,
    pub metrics: Vec<Metric>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Runtime(format!("writing {}: {e}", path.display()))
}

/// Runs the experiment and writes its files plus `manifest.json` into `out_dir`.
pub fn execute(cfg: &RunConfig, out_dir: &Path, progress: &dyn Fn(&str)) -> Result<OutputRecord, RunError> {
    let started = now_ms();
    let outcome = run_experiment(cfg, progress)?;
    fs::create_dir_all(out_dir).map_err(io_error(out_dir))?;
    let mut files = Vec::new();
    let mut write = |name: String, bytes: Vec<u8>| -> Result<(), RunError> {
        let path = out_dir.join(&name);
        fs::write(&path, &bytes).map_err(io_error(&path))?;
        files.push(FileEntry {
            path: name,
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        Ok(())
    };
    write("config.txt".into(), cfg.canonical.clone().into_bytes())?;
    if cfg.format.csv() {
        for (stem, text) in &outcome.tables {
            write(format!("{stem}.csv"), text.clone().into_bytes())?;
        }
    }
    if cfg.format.json() {
        for (stem, doc) in &outcome.documents {
            let mut text = serde_json::to_string_pretty(doc).expect("json values serialize");
            text.push('\n');
            write(format!("{stem}.json"), text.into_bytes())?;
        }
    }
    let record = OutputRecord {
        kind: cfg.kind.name().to_string(),
        config_hash: sha256_hex(cfg.canonical.as_bytes()),
        artifact_version: ARTIFACT_VERSION.to_string(),
        seed: cfg.seed,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        verdict: outcome.verdict,
        summary: outcome.summary,
        metrics: outcome.metrics,
        files,
    };
    let mut text = serde_json::to_string_pretty(&record).expect("record serializes");
    text.push('\n');
    let path = out_dir.join(MANIFEST);
    fs::write(&path, text).map_err(io_error(&path))?;
    Ok(record)
}

/// Exit status for a finished run: 0 pass, 1 fail or inconclusive.
pub fn verdict_exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Pass => 0,
        Verdict::Fail | Verdict::Inconclusive => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
