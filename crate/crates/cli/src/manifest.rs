//! Run manifests: the fully resolved configuration, a content fingerprint of
//! the input dataset, and the artifact paths. Re-running a command with the
//! same manifest contents reproduces the same metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FORMAT: &str = "gamepl-manifest-v1";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub resolved_config: BTreeMap<String, String>,
    /// `sha256:<hex>` over the dataset files backing the run.
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub artifacts: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Io(format!("manifest serialization: {e}")))?;
        std::fs::write(path, body)
            .map_err(|e| CliError::Io(format!("manifest {}: {e}", path.display())))?;
        Ok(())
    }
}

/// SHA-256 over the concatenated bytes of the given files.
pub fn fingerprint(paths: &[&Path]) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for path in paths {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        hasher.update(&bytes);
    }
    Ok(format!("sha256:{:x}", hasher.finalize()))
}
