//! Paired augmentation: one latent code pushed through both the source and
//! the adapted target generator yields a (source, target) training pair.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::{latent_batch, sample_latent, LatentCode};
use crate::datagen::{quantize8, unbatch, write_dataset, ImagePair, PairedDataset, Provenance};
use crate::error::{Error, Result};
use crate::nets::{Generator, LatentSpec, Network};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Latent inputs actually handed to each generator for one draw.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawRecord {
    pub index: u64,
    pub latent_seed: u64,
    pub source_input: Vec<f64>,
    pub target_input: Vec<f64>,
}

/// A batch of augmented pairs as `[N, C, H, W]` tensors.
#[derive(Clone, Debug)]
pub struct AugmentedBatch<T> {
    pub source: Tensor<T>,
    pub target: Tensor<T>,
    pub draw_indices: Vec<u64>,
    pub latent_seeds: Vec<u64>,
}

/// Seeded, counter-addressed stream of augmented pairs. Draw `i` depends
/// only on the two generators, `stream_seed` and `i`.
pub struct AugmentedPairStream<'g, T: Real> {
    g_source: &'g Generator<T>,
    g_target: &'g Generator<T>,
    latent: LatentSpec,
    stream_seed: u64,
    counter: u64,
    record_draws: bool,
    draws: Vec<DrawRecord>,
}

impl<'g, T: Real> AugmentedPairStream<'g, T> {
    pub fn new(g_source: &'g Generator<T>, g_target: &'g Generator<T>, stream_seed: u64) -> Result<Self> {
        let (s, t) = (g_source.spec(), g_target.spec());
        if s.latent != t.latent {
            return Err(Error::config(format!(
                "generators disagree on latent dim: {} vs {}",
                s.latent.dim, t.latent.dim
            )));
        }
        if s.output_resolution != t.output_resolution || s.channels != t.channels {
            return Err(Error::config(format!(
                "generator outputs differ: {}px/{}ch vs {}px/{}ch",
                s.output_resolution, s.channels, t.output_resolution, t.channels
            )));
        }
        Ok(Self {
            g_source,
            g_target,
            latent: s.latent,
            stream_seed,
            counter: 0,
            record_draws: false,
            draws: Vec::new(),
        })
    }

    /// Keep a record of the latent input each generator receives.
    pub fn with_draw_records(mut self) -> Self {
        self.record_draws = true;
        self
    }

    pub fn draws(&self) -> &[DrawRecord] {
        &self.draws
    }

    pub fn stream_seed(&self) -> u64 {
        self.stream_seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Reposition the stream; the next draw will be `index`.
    pub fn seek(&mut self, index: u64) {
        self.counter = index;
    }

    pub fn latent_seed(&self, index: u64) -> u64 {
        rng::mix(rng::derive(self.stream_seed, "augment-latent") ^ rng::mix(index))
    }

    pub fn latent_at(&self, index: u64) -> LatentCode {
        sample_latent(&self.latent, self.latent_seed(index))
    }

    pub fn resolution(&self) -> usize {
        self.g_source.resolution()
    }

    /// The next `n` pairs, generated as one batch per generator.
    pub fn sample_batch(&mut self, n: usize) -> Result<AugmentedBatch<T>> {
        if n == 0 {
            return Err(Error::config("augmented batch size must be >= 1"));
        }
        let indices: Vec<u64> = (self.counter..self.counter + n as u64).collect();
        let codes: Vec<LatentCode> = indices.iter().map(|&i| self.latent_at(i)).collect();
        let z: Tensor<T> = latent_batch(&codes);
        let source_in = z.clone();
        let target_in = z;
        if self.record_draws {
            let dim = self.latent.dim;
            for (k, c) in codes.iter().enumerate() {
                let row = |t: &Tensor<T>| t.data()[k * dim..(k + 1) * dim].iter().map(|v| v.as_f64()).collect();
                self.draws.push(DrawRecord {
                    index: indices[k],
                    latent_seed: c.seed,
                    source_input: row(&source_in),
                    target_input: row(&target_in),
                });
            }
        }
        let source = self.g_source.generate(&source_in);
        let target = self.g_target.generate(&target_in);
        self.counter += n as u64;
        Ok(AugmentedBatch { source, target, draw_indices: indices, latent_seeds: codes.iter().map(|c| c.seed).collect() })
    }

    /// The next pair.
    pub fn sample_paired(&mut self) -> Result<ImagePair> {
        let b = self.sample_batch(1)?;
        let index = b.draw_indices[0];
        let mut pair = ImagePair::new(
            format!("aug_{index:06}"),
            unbatch(&b.source).remove(0),
            unbatch(&b.target).remove(0),
            Provenance::Augmented,
        )?;
        pair.seed = Some(b.latent_seeds[0]);
        Ok(pair)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub file: String,
    pub draw_index: u64,
    pub latent_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub stream_seed: u64,
    pub source_checkpoint: String,
    pub target_checkpoint: String,
    pub draws: Vec<AugmentDraw>,
}

pub const AUGMENT_MANIFEST: &str = "augment_manifest.json";

/// Materialize the next `n` pairs of `stream`, quantized to 8 bits, as a
/// dataset directory plus a manifest of draw indices and latent seeds.
pub fn export_augmented_set<T: Real>(
    stream: &mut AugmentedPairStream<'_, T>,
    n: usize,
    out_dir: &Path,
) -> Result<PairedDataset> {
    if n == 0 {
        return Err(Error::config("export needs n >= 1"));
    }
    let mut pairs = Vec::with_capacity(n);
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = stream.sample_paired()?;
        for im in [&mut p.source, &mut p.target] {
            im.data.iter_mut().for_each(|v| *v = quantize8(*v));
        }
        let index = stream.counter() - 1;
        draws.push(AugmentDraw { file: format!("{}.png", p.name), draw_index: index, latent_seed: p.seed.unwrap_or(0) });
        pairs.push(p);
    }
    let ds = PairedDataset::new(pairs, "augmented", stream.stream_seed())?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_dataset(out_dir, &ds, None, None)?;
    let manifest = AugmentManifest {
        stream_seed: stream.stream_seed(),
        source_checkpoint: stream.g_source.params().content_fingerprint(),
        target_checkpoint: stream.g_target.params().content_fingerprint(),
        draws,
    };
    let path = out_dir.join(AUGMENT_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| Error::io(&path, e))?;
    Ok(ds)
}
