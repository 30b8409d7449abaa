//! Synthetic paired domains with an analytic style oracle, plus ingestion of
//! real paired image folders.
//!
//! All images produced here live on the 8-bit grid `k / 255`, which makes
//! PNG storage lossless and keeps the oracle transforms exact.

mod io;
mod oracle;
mod raster;

pub use io::{load_image_folder, read_dataset, read_png, write_dataset, write_png, DatasetManifest, PairRecord};
pub use oracle::{apply_oracle, OracleTransform};
pub use raster::{generate_source_image, BackgroundMode, SyntheticSpec};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Snap a value to the 8-bit grid.
pub fn quantize8(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// A `C×H×W` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image data size");
        Self { channels, height, width, data }
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f32) -> Self {
        Self::new(channels, height, width, vec![v; channels * height * width])
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
    }

    /// Inverse of [`Image::to_tensor`] for a `C×H×W` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        let s = t.shape();
        assert_eq!(s.len(), 3, "expected C×H×W");
        Self::new(s[0], s[1], s[2], t.data().iter().map(|v| v.as_f64() as f32).collect())
    }
}

/// Stack images into an `[N, C, H, W]` batch.
pub fn batch_tensor<T: Real>(images: &[&Image]) -> Tensor<T> {
    let items: Vec<Tensor<T>> = images.iter().map(|im| im.to_tensor()).collect();
    Tensor::stack(&items)
}

/// Split an `[N, C, H, W]` batch back into images.
pub fn unbatch<T: Real>(t: &Tensor<T>) -> Vec<Image> {
    (0..t.shape()[0]).map(|i| Image::from_tensor(&t.index0(i))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Anchor,
    Augmented,
    SyntheticOracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub name: String,
    pub source: Image,
    pub target: Image,
    pub provenance: Provenance,
    /// Generation seed, when the pair was synthesized.
    pub seed: Option<u64>,
}

impl ImagePair {
    pub fn new(name: impl Into<String>, source: Image, target: Image, provenance: Provenance) -> Result<Self> {
        if source.shape() != target.shape() {
            return Err(Error::contract(format!(
                "pair source shape {:?} differs from target shape {:?}",
                source.shape(),
                target.shape()
            )));
        }
        if !source.in_unit_range() || !target.in_unit_range() {
            return Err(Error::contract("pair values must lie in [0, 1]"));
        }
        Ok(Self { name: name.into(), source, target, provenance, seed: None })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    pub pairs: Vec<ImagePair>,
    pub domain_label: String,
    pub split_seed: u64,
}

impl PairedDataset {
    pub fn new(pairs: Vec<ImagePair>, domain_label: impl Into<String>, split_seed: u64) -> Result<Self> {
        let Some(first) = pairs.first() else {
            return Err(Error::config("a paired dataset must not be empty"));
        };
        let shape = first.source.shape();
        if pairs.iter().any(|p| p.source.shape() != shape) {
            return Err(Error::contract("all pairs in a dataset must share a resolution"));
        }
        Ok(Self { pairs, domain_label: domain_label.into(), split_seed })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.pairs[0].source.height
    }

    pub fn content_fingerprint(&self) -> String {
        pairs_fingerprint(&self.pairs)
    }

    /// Keep the first `n` pairs.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::config(format!("cannot take {n} pairs from a dataset of {}", self.len())));
        }
        Self::new(self.pairs[..n].to_vec(), self.domain_label.clone(), self.split_seed)
    }
}

/// SHA-256 over pair names and pixel values, in order.
pub fn pairs_fingerprint(pairs: &[ImagePair]) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        h.update(p.name.as_bytes());
        for v in p.source.data.iter().chain(&p.target.data) {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of item `index` of a dataset generated under `seed`.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    rng::mix(rng::derive(seed, "dataset-item") ^ rng::mix(index as u64))
}

pub fn build_paired_dataset(
    spec: &SyntheticSpec,
    oracle: &OracleTransform,
    n: usize,
    seed: u64,
) -> Result<PairedDataset> {
    if n < 1 {
        return Err(Error::config("dataset size must be at least 1"));
    }
    spec.validate()?;
    oracle.validate()?;
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let s = item_seed(seed, i);
        let source = generate_source_image(spec, s)?;
        let target = apply_oracle(oracle, &source)?;
        let mut pair = ImagePair::new(format!("pair_{i:05}"), source, target, Provenance::SyntheticOracle)?;
        pair.seed = Some(s);
        pairs.push(pair);
    }
    PairedDataset::new(pairs, oracle.to_string(), seed)
}

/// Seeded disjoint split into `k_train` training pairs and the remainder.
pub fn split(dataset: &PairedDataset, k_train: usize, seed: u64) -> Result<(PairedDataset, PairedDataset)> {
    if k_train < 1 || k_train >= dataset.len() {
        return Err(Error::config(format!(
            "k_train must be in 1..{}, got {k_train}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(rng::derive(seed, "split"), 0));
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.pairs[i].clone()).collect::<Vec<_>>();
    let train = PairedDataset::new(pick(&order[..k_train]), dataset.domain_label.clone(), seed)?;
    let test = PairedDataset::new(pick(&order[k_train..]), dataset.domain_label.clone(), seed)?;
    Ok((train, test))
}
