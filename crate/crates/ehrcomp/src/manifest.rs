use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::formats::write_json;
use crate::fsio::digest_path;
use crate::IoError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command and check its outputs. Holds no
/// timestamps, so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Input path as given -> sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory -> sha256.
    pub outputs: BTreeMap<String, String>,
}

pub struct ManifestBuilder {
    out_dir: PathBuf,
    manifest: RunManifest,
    pending: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new<C: Serialize>(command: &str, out_dir: &Path, seed: Option<u64>, config: &C) -> Self {
        ManifestBuilder {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                seed,
                config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
            pending: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), IoError> {
        let digest = digest_path(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.pending.push(path.to_path_buf());
    }

    /// Digests the recorded outputs and writes the manifest; returns its path.
    pub fn finish(mut self) -> Result<PathBuf, IoError> {
        for path in &self.pending {
            let key = path
                .strip_prefix(&self.out_dir)
                .unwrap_or(path)
                .to_string_lossy()
                .replace('\\', "/");
            self.manifest.outputs.insert(key, digest_path(path)?);
        }
        let path = self.out_dir.join(MANIFEST_FILE);
        write_json(&path, &self.manifest)?;
        Ok(path)
    }
}
