//! Run manifests: the resolved config, seeds, versions and output digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Resolved};
use crate::CliError;

pub const MANIFEST_FORMAT: &str = "exswitch-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub format: &'static str,
    pub version: u32,
    pub command: &'a str,
    pub argv: Vec<String>,
    pub exswitch_version: &'static str,
    pub config: &'a Resolved,
    pub model_hash: String,
    pub seeds: Seeds,
    /// sha256 of every file written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Seeds {
    pub base: u64,
    pub init: u64,
    pub train: u64,
    pub monte_carlo: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Self {
            base,
            init: base,
            train: base,
            monte_carlo: base,
        }
    }
}

/// Just enough of a manifest to recover its config snapshot.
#[derive(Deserialize)]
pub struct ManifestConfig {
    pub format: String,
    pub config: ExperimentConfig,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Tracks the files a run writes.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path for `name` inside the run directory, recorded for hashing.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    pub fn digests(&self) -> Result<BTreeMap<String, String>, CliError> {
        let mut out = BTreeMap::new();
        for p in &self.files {
            if p.is_file() {
                let name = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                out.insert(name, sha256_file(p)?);
            }
        }
        Ok(out)
    }

    pub fn write_manifest(&self, manifest: &Manifest<'_>) -> Result<PathBuf, CliError> {
        let p = self.dir.join(MANIFEST_FILE);
        let text =
            serde_json::to_string_pretty(manifest).map_err(|e| CliError::Run(e.to_string()))?;
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }
}
