//! Run directories: numeric outputs, JSON sidecars and the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::Scenario;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const SCENARIO: &str = "scenario.json";
pub const MANIFEST_SCHEMA: &str = "trapwave-manifest/1";
pub const UNITS: &str = "hbar = 2m = 1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub scenario: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<FileEntry>,
}

/// Output directory of one scenario run.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
    config_hash: String,
}

/// `dir/stem.ext` to `dir/stem.meta.json`.
pub fn sidecar_name(rel: &str) -> String {
    let stem = rel.rsplit_once('.').map_or(rel, |(s, _)| s);
    format!("{stem}.meta.json")
}

/// `<root>/<name>-<first 12 hex digits of the config hash>`
pub fn run_dir_name(s: &Scenario) -> String {
    format!("{}-{}", s.name, &s.config_hash()[..12])
}

impl RunDir {
    /// Creates the directory and writes the canonical scenario.
    pub fn create(root: &Path, s: &Scenario) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        fs::write(root.join(SCENARIO), s.canonical_json())?;
        Ok(Self { root: root.to_path_buf(), config_hash: s.config_hash() })
    }

    pub fn open(root: &Path, config_hash: String) -> Self {
        Self { root: root.to_path_buf(), config_hash }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes the sidecar describing a numeric output.
    pub fn sidecar(&self, rel: &str, producer: &str, units: Value, description: &str) -> CliResult<()> {
        let doc = json!({
            "file": rel,
            "producer": producer,
            "config_hash": self.config_hash,
            "units": UNITS,
            "columns": units,
            "description": description,
        });
        fs::write(self.path(&sidecar_name(rel)), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn write_csv<R: Serialize>(&self, rel: &str, rows: &[R], producer: &str, units: Value, description: &str) -> CliResult<()> {
        if let Some(parent) = self.path(rel).parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(self.path(rel))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.sidecar(rel, producer, units, description)
    }

    pub fn write_json<V: Serialize>(&self, rel: &str, value: &V, producer: &str, units: Value, description: &str) -> CliResult<()> {
        fs::write(self.path(rel), serde_json::to_string_pretty(value)?)?;
        self.sidecar(rel, producer, units, description)
    }

    /// Hashes every file below the root except the manifest itself.
    pub fn write_manifest(&self, scenario: &str, seeds: BTreeMap<String, u64>) -> CliResult<Manifest> {
        let mut files = Vec::new();
        collect(&self.root, &self.root, &mut files)?;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let m = Manifest {
            schema: MANIFEST_SCHEMA.into(),
            scenario: scenario.into(),
            config_hash: self.config_hash.clone(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seeds,
            files,
        };
        fs::write(self.path(MANIFEST), serde_json::to_string_pretty(&m)?)?;
        Ok(m)
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> CliResult<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect(root, &p, out)?;
            continue;
        }
        let rel = p.strip_prefix(root).map_err(|e| CliError::Io(e.to_string()))?;
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if rel == MANIFEST {
            continue;
        }
        let bytes = fs::read(&p)?;
        out.push(FileEntry { path: rel, sha256: hex::encode(Sha256::digest(&bytes)), bytes: bytes.len() as u64 });
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    Ok(serde_json::from_str(&text)?)
}
