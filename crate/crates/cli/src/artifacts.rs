//! Output directory layout, atomic writes and per-stage stamps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::error::{CliError, Result};

/// Record of what a stage wrote and under which config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub config_sha256: String,
    /// Output path relative to the output directory, mapped to its sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
    pub config_sha256: String,
}

/// Replaces `path` with `bytes` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>, config_sha256: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            config_sha256: config_sha256.into(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.path(&format!("stamps/{stage}.json"))
    }

    pub fn writer(&self, stage: &'static str) -> StageWriter<'_> {
        StageWriter {
            art: self,
            stage,
            outputs: BTreeMap::new(),
        }
    }

    pub fn stamp(&self, stage: &str) -> Result<Stamp> {
        let path = self.stamp_path(stage);
        let text = std::fs::read_to_string(&path).map_err(|_| CliError::Missing {
            path: path.clone(),
            hint: format!("run `geotarget {stage}` first"),
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Bytes of an artifact written by `stage`, checked against that stage's stamp.
    pub fn read(&self, stage: &str, rel: &str) -> Result<Vec<u8>> {
        let path = self.path(rel);
        let stamp = self.stamp(stage).map_err(|e| match e {
            CliError::Missing { hint, .. } => CliError::Missing {
                path: path.clone(),
                hint,
            },
            other => other,
        })?;
        if stamp.config_sha256 != self.config_sha256 {
            return Err(CliError::Stale {
                path,
                reason: format!(
                    "stage '{stage}' ran under a different config; rerun `geotarget {stage}`"
                ),
            });
        }
        let expected = stamp.outputs.get(rel).ok_or_else(|| CliError::Missing {
            path: path.clone(),
            hint: format!("stage '{stage}' did not record it; rerun `geotarget {stage}`"),
        })?;
        let bytes = std::fs::read(&path).map_err(|_| CliError::Missing {
            path: path.clone(),
            hint: format!("run `geotarget {stage}` first"),
        })?;
        if &sha256_hex(&bytes) != expected {
            return Err(CliError::Stale {
                path,
                reason: format!("modified after stage '{stage}' wrote it"),
            });
        }
        Ok(bytes)
    }

    pub fn read_string(&self, stage: &str, rel: &str) -> Result<String> {
        let bytes = self.read(stage, rel)?;
        String::from_utf8(bytes).map_err(|_| CliError::Stale {
            path: self.path(rel),
            reason: "not valid UTF-8".into(),
        })
    }
}

/// Collects a stage's outputs; the stamp is written last by [`StageWriter::finish`].
pub struct StageWriter<'a> {
    art: &'a Artifacts,
    stage: &'static str,
    outputs: BTreeMap<String, String>,
}

impl StageWriter<'_> {
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.art.path(rel), bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Renders through `f` into memory, then writes atomically.
    pub fn write_with(
        &mut self,
        rel: &str,
        f: impl FnOnce(&mut Vec<u8>) -> geotarget_core::Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn finish(self) -> Result<Stamp> {
        let stamp = Stamp {
            stage: self.stage.to_string(),
            config_sha256: self.art.config_sha256.clone(),
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&stamp)?;
        text.push('\n');
        write_atomic(&self.art.stamp_path(self.stage), text.as_bytes())?;
        Ok(stamp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamped_read_detects_missing_and_stale() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifacts::new(dir.path(), "abc");
        assert!(matches!(
            art.read("weights", "weights/edges.csv"),
            Err(CliError::Missing { .. })
        ));

        let mut w = art.writer("weights");
        w.write("weights/edges.csv", b"a,b\n").unwrap();
        w.finish().unwrap();
        assert_eq!(art.read("weights", "weights/edges.csv").unwrap(), b"a,b\n");

        std::fs::write(art.path("weights/edges.csv"), b"tampered").unwrap();
        let err = art.read("weights", "weights/edges.csv").unwrap_err();
        assert!(matches!(err, CliError::Stale { .. }));
        assert!(err.to_string().contains("edges.csv"));

        let other = Artifacts::new(dir.path(), "def");
        assert!(matches!(
            other.read("weights", "weights/edges.csv"),
            Err(CliError::Stale { .. })
        ));
    }
}
