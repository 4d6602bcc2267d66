//! JSON checkpoints with a content digest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::approx::RegimeEncoding;
use super::mlp::{Architecture, NetworkParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "exswitch-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where the parameters came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub init_seed: u64,
    pub train_seed: Option<u64>,
    pub episodes: usize,
    /// Digest of the checkpoint training resumed from, if any.
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Body {
    format: String,
    version: u32,
    architecture: Architecture,
    description: String,
    encoding: RegimeEncoding,
    model_hash: String,
    lineage: SeedLineage,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct File {
    #[serde(flatten)]
    body: Body,
    digest: String,
}

/// A verified checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub encoding: RegimeEncoding,
    pub model_hash: String,
    pub lineage: SeedLineage,
    pub digest: String,
}

fn digest_of(body: &Body) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(body)?)))
}

/// Writes the checkpoint and returns its digest.
pub fn checkpoint_save(
    path: &Path,
    params: &NetworkParams,
    encoding: RegimeEncoding,
    model_hash: &str,
    lineage: &SeedLineage,
) -> Result<String> {
    let body = Body {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        architecture: params.architecture().clone(),
        description: params.architecture().describe(),
        encoding,
        model_hash: model_hash.into(),
        lineage: lineage.clone(),
        params: params.xi().to_vec(),
    };
    let digest = digest_of(&body)?;
    let text = serde_json::to_string_pretty(&File {
        body,
        digest: digest.clone(),
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(digest)
}

/// Reads and verifies a checkpoint. `architecture` and `model_hash`, when
/// given, must match the file.
pub fn checkpoint_load(
    path: &Path,
    architecture: Option<&Architecture>,
    model_hash: Option<&str>,
) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if raw.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("missing version".into()))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version.min(u32::MAX as u64) as u32,
        });
    }
    let file: File = serde_json::from_value(raw)?;
    if digest_of(&file.body)? != file.digest {
        return Err(Error::DigestMismatch);
    }
    let body = file.body;
    if let Some(expected) = architecture {
        if *expected != body.architecture {
            return Err(Error::ArchitectureMismatch {
                expected: expected.describe(),
                found: body.architecture.describe(),
            });
        }
    }
    if let Some(expected) = model_hash {
        if expected != body.model_hash {
            return Err(Error::ModelHashMismatch {
                expected: expected.into(),
                found: body.model_hash,
            });
        }
    }
    Ok(Checkpoint {
        params: NetworkParams::new(body.architecture, body.params)?,
        encoding: body.encoding,
        model_hash: body.model_hash,
        lineage: body.lineage,
        digest: file.digest,
    })
}
