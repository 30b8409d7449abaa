//! Checkpoint directories: `header.json` plus one little-endian blob per
//! named parameter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hex, Network, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const HEADER_FILE: &str = "header.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: String,
    pub fingerprint: String,
    pub dtype: String,
    pub content_fingerprint: String,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

pub fn save_params<T: Real>(
    dir: &Path,
    params: &ParamSet<T>,
    architecture: &str,
    fingerprint: &str,
    metadata: BTreeMap<String, String>,
) -> Result<CheckpointHeader> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(params.len());
    for p in params.iter() {
        let mut bytes = Vec::with_capacity(p.value.len() * T::BYTES);
        for &v in p.value.data() {
            v.write_le(&mut bytes);
        }
        let file = format!("{}.bin", p.name);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            file,
            sha256: hex(&Sha256::digest(&bytes)),
        });
    }
    let header = CheckpointHeader {
        architecture: architecture.to_string(),
        fingerprint: fingerprint.to_string(),
        dtype: T::DTYPE.to_string(),
        content_fingerprint: params.content_fingerprint(),
        params: entries,
        metadata,
    };
    let path = dir.join(HEADER_FILE);
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(header)
}

pub fn read_header(dir: &Path) -> Result<CheckpointHeader> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::ingestion(format!("cannot read checkpoint header {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::ingestion(format!("corrupt checkpoint header {}: {e}", path.display())))
}

/// Load a checkpoint, refusing it unless its architecture fingerprint equals
/// `expected_fingerprint`.
pub fn load_params<T: Real>(dir: &Path, expected_fingerprint: &str) -> Result<(ParamSet<T>, CheckpointHeader)> {
    let header = read_header(dir)?;
    if header.fingerprint != expected_fingerprint {
        return Err(Error::config(format!(
            "checkpoint {} has architecture fingerprint {} but {} was expected",
            dir.display(),
            header.fingerprint,
            expected_fingerprint
        )));
    }
    if header.dtype != T::DTYPE {
        return Err(Error::config(format!("checkpoint dtype {} but {} requested", header.dtype, T::DTYPE)));
    }
    let mut params = ParamSet::new();
    for e in &header.params {
        let path = dir.join(&e.file);
        let bytes = fs::read(&path)
            .map_err(|err| Error::ingestion(format!("cannot read {}: {err}", path.display())))?;
        let n: usize = e.shape.iter().product();
        if bytes.len() != n * T::BYTES || hex(&Sha256::digest(&bytes)) != e.sha256 {
            return Err(Error::ingestion(format!("corrupt parameter blob {}", path.display())));
        }
        let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        params.push(e.name.clone(), Tensor::new(e.shape.clone(), data));
    }
    if params.content_fingerprint() != header.content_fingerprint {
        return Err(Error::ingestion(format!("checkpoint {} fails its content fingerprint", dir.display())));
    }
    Ok((params, header))
}

/// Save a network's parameters under its own architecture fingerprint.
pub fn save_network<T: Real, N: Network<T>>(
    net: &N,
    dir: &Path,
    metadata: BTreeMap<String, String>,
) -> Result<CheckpointHeader> {
    save_params(dir, net.params(), &net.architecture(), &net.architecture_fingerprint(), metadata)
}

/// Overwrite the parameters of an already-built network from `dir`.
pub fn load_network<T: Real, N: Network<T>>(net: &mut N, dir: &Path) -> Result<CheckpointHeader> {
    let (params, header) = load_params(dir, &net.architecture_fingerprint())?;
    let same_layout = params.len() == net.params().len()
        && params.iter().zip(net.params().iter()).all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
    if !same_layout {
        return Err(Error::config(format!("checkpoint {} does not match the network layout", dir.display())));
    }
    *net.params_mut() = params;
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{build_student, StudentTranslatorSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = build_student::<f32>(&StudentTranslatorSpec::default(), 32, 9).unwrap();
        save_network(&s, dir.path(), BTreeMap::new()).unwrap();
        let mut t = build_student::<f32>(&StudentTranslatorSpec::default(), 32, 10).unwrap();
        assert_ne!(s.params(), t.params());
        load_network(&mut t, dir.path()).unwrap();
        assert_eq!(s.params(), t.params());
        assert_eq!(s.params().content_fingerprint(), read_header(dir.path()).unwrap().content_fingerprint);
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = build_student::<f32>(&StudentTranslatorSpec::default(), 32, 0).unwrap();
        save_network(&s, dir.path(), BTreeMap::new()).unwrap();
        let other = StudentTranslatorSpec { skip_connections: false, ..Default::default() };
        let mut t = build_student::<f32>(&other, 32, 0).unwrap();
        assert!(matches!(load_network(&mut t, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn corrupt_blob_is_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        let s = build_student::<f32>(&StudentTranslatorSpec::default(), 32, 0).unwrap();
        let header = save_network(&s, dir.path(), BTreeMap::new()).unwrap();
        fs::write(dir.path().join(&header.params[0].file), b"xx").unwrap();
        let mut t = s.clone();
        assert!(matches!(load_network(&mut t, dir.path()), Err(Error::Ingestion(_))));
    }
}
