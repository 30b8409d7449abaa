use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::{Image, ImagePair, OracleTransform, PairedDataset, Provenance, SyntheticSpec};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Read an image file as RGB in `[0, 1]`, optionally resized to a square
/// `resolution`.
pub fn read_png(path: &Path, resolution: Option<usize>) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::ingestion(format!("cannot read image {}: {e}", path.display())))?
        .to_rgb8();
    let img = match resolution {
        Some(r) if img.width() as usize != r || img.height() as usize != r => {
            image::imageops::resize(&img, r as u32, r as u32, FilterType::Triangle)
        }
        _ => img,
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Ok(Image::new(3, h, w, data))
}

/// Write an image as 8-bit PNG. Values on the `k / 255` grid round-trip
/// exactly through [`read_png`].
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let (c, h, w) = img.shape();
    let byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut buf = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                buf.push(byte(img.at(ch.min(c - 1), y, x)));
            }
        }
    }
    let out = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized to image");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn image_names(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries =
        fs::read_dir(dir).map_err(|e| Error::ingestion(format!("cannot list {}: {e}", dir.display())))?;
    let mut names = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::ingestion(format!("cannot list {}: {e}", dir.display())))?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            names.insert(entry.file_name().to_string_lossy().into_owned(), path);
        }
    }
    Ok(names)
}

/// Pair images from two folders by filename. Pairs come out in filename
/// order and are tagged as anchors.
pub fn load_image_folder(source_dir: &Path, target_dir: &Path, resolution: usize) -> Result<PairedDataset> {
    let src = image_names(source_dir)?;
    let tgt = image_names(target_dir)?;
    let mut unmatched: Vec<&str> = src.keys().filter(|k| !tgt.contains_key(*k)).map(String::as_str).collect();
    unmatched.extend(tgt.keys().filter(|k| !src.contains_key(*k)).map(String::as_str));
    if !unmatched.is_empty() {
        return Err(Error::ingestion(format!("unmatched image names: {}", unmatched.join(", "))));
    }
    if src.is_empty() {
        return Err(Error::ingestion(format!(
            "no images found in {} / {}",
            source_dir.display(),
            target_dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(src.len());
    for (name, path) in &src {
        let s = read_png(path, Some(resolution))?;
        let t = read_png(&tgt[name], Some(resolution))?;
        let stem = Path::new(name).file_stem().map_or(name.clone(), |s| s.to_string_lossy().into_owned());
        pairs.push(ImagePair::new(stem, s, t, Provenance::Anchor)?);
    }
    PairedDataset::new(pairs, source_dir.display().to_string(), 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub file: String,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

/// JSON description of a dataset directory (`source/`, `target/`,
/// `manifest.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub domain_label: String,
    pub split_seed: u64,
    pub resolution: usize,
    pub channels: usize,
    /// How floats map to stored bytes.
    pub quantization: String,
    pub synthetic_spec: Option<SyntheticSpec>,
    pub oracle: Option<OracleTransform>,
    pub pairs: Vec<PairRecord>,
}

pub fn write_dataset(
    dir: &Path,
    dataset: &PairedDataset,
    spec: Option<&SyntheticSpec>,
    oracle: Option<&OracleTransform>,
) -> Result<DatasetManifest> {
    let mut records = Vec::with_capacity(dataset.len());
    for pair in &dataset.pairs {
        let file = format!("{}.png", pair.name);
        write_png(&dir.join("source").join(&file), &pair.source)?;
        write_png(&dir.join("target").join(&file), &pair.target)?;
        records.push(PairRecord { file, provenance: pair.provenance, seed: pair.seed });
    }
    let manifest = DatasetManifest {
        domain_label: dataset.domain_label.clone(),
        split_seed: dataset.split_seed,
        resolution: dataset.resolution(),
        channels: dataset.pairs[0].source.channels,
        quantization: "8-bit PNG, value = byte / 255, byte = round(value * 255)".into(),
        synthetic_spec: spec.cloned(),
        oracle: oracle.cloned(),
        pairs: records,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Load a directory written by [`write_dataset`], restoring order,
/// provenance and seeds from its manifest.
pub fn read_dataset(dir: &Path) -> Result<(PairedDataset, DatasetManifest)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::ingestion(format!("cannot read {}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::ingestion(format!("malformed {}: {e}", path.display())))?;
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for rec in &manifest.pairs {
        let s = read_png(&dir.join("source").join(&rec.file), Some(manifest.resolution))?;
        let t = read_png(&dir.join("target").join(&rec.file), Some(manifest.resolution))?;
        let name = rec.file.trim_end_matches(".png").to_string();
        let mut pair = ImagePair::new(name, s, t, rec.provenance)?;
        pair.seed = rec.seed;
        pairs.push(pair);
    }
    let ds = PairedDataset::new(pairs, manifest.domain_label.clone(), manifest.split_seed)
        .map_err(|e| Error::ingestion(format!("{}: {e}", dir.display())))?;
    Ok((ds, manifest))
}
