use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::error::{Error, Result};

/// Record of one executed stage: the resolved config, fingerprints of what
/// went in and came out, wall-clock timings and the metric files written.
/// Paths are relative to the run's output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config: RunConfig,
    pub config_fingerprint: String,
    /// Digest of everything that determines the stage's outputs; a stage
    /// whose recorded key matches is skipped on rerun.
    pub cache_key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timings_secs: BTreeMap<String, f64>,
    pub metrics: Vec<PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn new(stage: &str, config: &RunConfig, cache_key: String) -> Self {
        Self {
            stage: stage.to_string(),
            config: config.clone(),
            config_fingerprint: config_fingerprint(config),
            cache_key,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timings_secs: BTreeMap::new(),
            metrics: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read run manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::ingestion(format!("malformed run manifest {}: {e}", path.display())))
    }

    /// The manifest at `path` if it exists and carries `cache_key`.
    pub fn cached(path: &Path, cache_key: &str) -> Option<Self> {
        let m = Self::read(path).ok()?;
        (m.cache_key == cache_key).then_some(m)
    }
}

/// Digest of the config with its output location removed, so the same
/// settings fingerprint identically wherever they run.
pub fn config_fingerprint(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.out_dir = PathBuf::new();
    digest(&[&c.render()])
}

pub fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of any serializable value.
pub fn digest_json<S: Serialize>(value: &S) -> String {
    digest(&[&serde_json::to_string(value).expect("value serializes")])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_ignores_output_location() {
        let a = RunConfig::default();
        let b = RunConfig { out_dir: "elsewhere".into(), ..a.clone() };
        let c = RunConfig { seed: 9, ..a.clone() };
        assert_eq!(config_fingerprint(&a), config_fingerprint(&b));
        assert_ne!(config_fingerprint(&a), config_fingerprint(&c));
    }

    #[test]
    fn digest_separates_parts() {
        assert_ne!(digest(&["ab", "c"]), digest(&["a", "bc"]));
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("datagen", &RunConfig::default(), "k".into());
        m.inputs.insert("pool".into(), "abc".into());
        m.metrics.push("runs/x/eval.csv".into());
        let path = dir.path().join("m.json");
        m.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
        assert!(RunManifest::cached(&path, "k").is_some());
        assert!(RunManifest::cached(&path, "other").is_none());
    }
}
