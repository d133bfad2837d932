//! Output-directory plumbing: lock, markers, JSON/CSV writers and digests.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use bartlab_core::model::Dataset;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub const LOCK_FILE: &str = ".bartlab.lock";
pub const INCOMPLETE_FILE: &str = "INCOMPLETE";
pub const LOG_FILE: &str = "run.log";
pub const REPORT_FILE: &str = "report.json";
pub const FOREST_FILE: &str = "forest.json";
pub const CUSTOM_PREDICTIONS_FILE: &str = "custom_predictions.csv";
pub const STAGE_DIR: &str = "stages";

/// Files that describe a run rather than its results.
pub fn is_bookkeeping(rel: &str) -> bool {
    matches!(rel, LOCK_FILE | INCOMPLETE_FILE | LOG_FILE | REPORT_FILE | CUSTOM_PREDICTIONS_FILE)
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join(STAGE_DIR)).map_err(|e| PipelineError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(PipelineError::Locked(dir.to_path_buf())),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn stage_path(out: &Path, stage: &str) -> PathBuf {
    out.join(STAGE_DIR).join(format!("{stage}.json"))
}

/// Read an upstream artifact, naming the stage that produces it when absent.
pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &'static str) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == ErrorKind::NotFound => {
            return Err(PipelineError::MissingArtifact {
                path: path.to_path_buf(),
                stage: producer,
            })
        }
        Err(e) => return Err(PipelineError::io(path, e)),
    };
    Ok(serde_json::from_str(&text)?)
}

/// Write a CSV from a header and pre-rendered rows.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}

pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Digest of feature names, design matrix and response, bit for bit.
pub fn dataset_digest(d: &Dataset) -> String {
    let mut h = Sha256::new();
    for n in &d.names {
        h.update(n.as_bytes());
        h.update([0u8]);
    }
    for v in d.x.as_slice().iter().chain(&d.y) {
        h.update(v.to_bits().to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Every result file under `out`, sorted by relative path.
pub fn manifest(out: &Path) -> Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    collect(out, out, &mut files)?;
    files.sort();
    files
        .into_iter()
        .filter(|rel| !is_bookkeeping(rel))
        .map(|rel| {
            let path = out.join(&rel);
            let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
            Ok(ManifestEntry {
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
                file: rel,
            })
        })
        .collect()
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))? {
        let path = entry.map_err(|e| PipelineError::io(dir, e))?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root");
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(rel.join("/"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(PipelineError::Locked(_))));
        drop(a);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn manifest_skips_bookkeeping() {
        let dir = tempfile::tempdir().unwrap();
        write_text(&dir.path().join("b.csv"), "x\n").unwrap();
        write_text(&dir.path().join("stages/a.json"), "{}\n").unwrap();
        write_text(&dir.path().join(LOG_FILE), "t\n").unwrap();
        let m = manifest(dir.path()).unwrap();
        let names: Vec<&str> = m.iter().map(|e| e.file.as_str()).collect();
        assert_eq!(names, vec!["b.csv", "stages/a.json"]);
        assert_eq!(m[0].sha256, sha256_hex(b"x\n"));
    }

    #[test]
    fn missing_artifact_names_producer() {
        let err = read_json::<serde_json::Value>(Path::new("/nonexistent/tune.json"), "tune").unwrap_err();
        assert!(err.to_string().contains("`tune`"));
    }
}
