//! Run manifests: what went into a run, fingerprinted so artifacts can be
//! traced back to it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DlnError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// The resolved configuration, after flag overrides.
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by role (`data`, `schema`, ...).
    pub inputs: BTreeMap<String, String>,
    /// Output paths keyed by role.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            tool: "dln".into(),
            version: TOOL_VERSION.into(),
            command: command.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.into(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_artifact(&mut self, role: &str, path: &Path) {
        self.artifacts.insert(role.into(), path.display().to_string());
    }

    /// SHA-256 of the canonical JSON form (object keys sorted).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("manifest serializes");
        sha256_hex(canonical_json(&value).as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// JSON text with object keys in sorted order at every level.
pub fn canonical_json(value: &serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let sorted: BTreeMap<&String, String> = map.iter().map(|(k, v)| (k, canonical_json(v))).collect();
            let body: Vec<String> = sorted
                .into_iter()
                .map(|(k, v)| format!("{}:{v}", serde_json::to_string(k).expect("string")))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| DlnError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
