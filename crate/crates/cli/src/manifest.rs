//! Run manifests: every command records its resolved configuration, seeds,
//! and paths before any long-running work begins, so outputs are replayable.

use congaze::error::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub unix_timestamp: u64,
    pub input_paths: Vec<String>,
    pub output_path: String,
    /// SHA-256 of the canonical (sorted-key) JSON config, stable under field
    /// reordering in the source file.
    pub config_hash: String,
}

fn canonical_json(value: &serde_json::Value) -> String {
    // serde_json maps iterate in insertion order; rebuild with sorted keys
    match value {
        serde_json::Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let inner: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", serde_json::to_string(k).unwrap(), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", inner.join(","))
        }
        serde_json::Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", inner.join(","))
        }
        other => other.to_string(),
    }
}

impl RunManifest {
    pub fn new<C: Serialize>(
        command: &str,
        config: &C,
        seed: u64,
        input_paths: &[&Path],
        output_path: &Path,
    ) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let mut hasher = Sha256::new();
        hasher.update(canonical_json(&config).as_bytes());
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_err(|e| Error::validation(format!("system clock: {e}")))?
            .as_secs();
        Ok(RunManifest {
            command: command.to_string(),
            config_hash: format!("{:x}", hasher.finalize()),
            config,
            seed,
            unix_timestamp: timestamp,
            input_paths: input_paths.iter().map(|p| p.display().to_string()).collect(),
            output_path: output_path.display().to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_under_field_reordering() {
        let a: serde_json::Value = serde_json::from_str(r#"{"x": 1, "y": {"b": 2, "a": 3}}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"y": {"a": 3, "b": 2}, "x": 1}"#).unwrap();
        let ma = RunManifest::new("t", &a, 0, &[], Path::new("out")).unwrap();
        let mb = RunManifest::new("t", &b, 0, &[], Path::new("out")).unwrap();
        assert_eq!(ma.config_hash, mb.config_hash);
    }
}
