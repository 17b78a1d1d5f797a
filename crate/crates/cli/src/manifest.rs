//! Run manifests: what was run, on which inputs, producing which outputs.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON form of `config`.
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    /// Output files, relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

pub fn config_hash(config: &RunConfig) -> anyhow::Result<String> {
    Ok(sha256_bytes(serde_json::to_string(config)?.as_bytes()))
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, inputs: &[PathBuf], outputs: &[PathBuf]) -> anyhow::Result<Self> {
        let digest = |p: &PathBuf, base: Option<&Path>| -> anyhow::Result<FileDigest> {
            let full = base.map_or(p.clone(), |b| b.join(p));
            Ok(FileDigest { path: p.clone(), sha256: sha256_file(&full)? })
        };
        Ok(Self {
            manifest_version: MANIFEST_VERSION,
            tool: "claimscore".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            config_sha256: config_hash(config)?,
            config: config.clone(),
            inputs: inputs.iter().map(|p| digest(p, None)).collect::<anyhow::Result<_>>()?,
            outputs: outputs.iter().map(|p| digest(p, Some(&config.out))).collect::<anyhow::Result<_>>()?,
        })
    }

    pub fn write(&self) -> anyhow::Result<PathBuf> {
        let path = self.config.out.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| crate::ConfigError(format!("manifest {}: {e}", path.display())))?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(crate::ConfigError(format!("unsupported manifest version {}", m.manifest_version)).into());
        }
        if config_hash(&m.config)? != m.config_sha256 {
            return Err(crate::ConfigError("manifest config does not match its recorded hash".into()).into());
        }
        Ok(m)
    }
}
