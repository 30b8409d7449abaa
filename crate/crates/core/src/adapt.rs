//! Source-teacher pretraining and few-shot adaptation of a cloned teacher to
//! the target domain.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::datagen::{batch_tensor, Image};
use crate::distill::{lsgan_d_loss, lsgan_g_loss, LossWeights};
use crate::error::{DivergenceDump, Error, Result};
use crate::nets::{
    build_patch_discriminator, clone_generator, DiscriminatorPairSpec, Generator, LatentSpec, Network, PatchScale,
};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// One latent vector and the seed it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub values: Vec<f64>,
    pub seed: u64,
}

pub fn sample_latent(spec: &LatentSpec, seed: u64) -> LatentCode {
    let mut r = rng::stream(rng::derive(seed, "latent"), 0);
    LatentCode { values: (0..spec.dim).map(|_| r.sample(StandardNormal)).collect(), seed }
}

/// Stack latent codes into an `[N, dim]` batch.
pub fn latent_batch<T: Real>(codes: &[LatentCode]) -> Tensor<T> {
    let dim = codes[0].values.len();
    let data = codes.iter().flat_map(|c| c.values.iter().map(|&v| T::lit(v))).collect();
    Tensor::new(vec![codes.len(), dim], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub iterations: usize,
    pub batch: usize,
    /// Weight of the distance-consistency regularizer (adaptation only).
    pub consistency_weight: f64,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 8,
            consistency_weight: 1.0,
            generator_lr: 2e-4,
            discriminator_lr: 2e-4,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::config(format!("adaptation batch must be >= 2, got {}", self.batch)));
        }
        if !(self.consistency_weight >= 0.0) {
            return Err(Error::config("consistency_weight must be >= 0"));
        }
        if !(self.generator_lr > 0.0 && self.discriminator_lr > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, ..AdamConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptLogRow {
    pub iteration: usize,
    pub adversarial: f64,
    pub consistency: f64,
    pub discriminator: f64,
}

pub fn write_adapt_log(path: &Path, rows: &[AdaptLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

const DIST_EPS: f64 = 1e-8;

/// Row-wise log-probabilities of the softmax over negative pairwise
/// Euclidean distances (temperature 1), diagonal excluded.
fn distance_log_probs<'t, T: Real>(feats: Var<'t, T>) -> Var<'t, T> {
    let n = feats.shape()[0];
    let flat = feats.reshape(vec![n, feats.shape()[1..].iter().product::<usize>()]);
    flat.pairwise_sq_dist().add_scalar(DIST_EPS).sqrt().scale(-1.0).log_softmax_offdiag()
}

/// Mean over rows of `KL(P_src,i || P_tgt,i)`, where each row distribution is
/// the softmax of negative distances from sample `i` to the other samples
/// of its batch.
pub fn distance_consistency_loss<'t, T: Real>(src: Var<'t, T>, tgt: Var<'t, T>) -> Result<Var<'t, T>> {
    let (ss, ts) = (src.shape(), tgt.shape());
    if ss[0] != ts[0] {
        return Err(Error::config(format!("feature batches differ in size: {} vs {}", ss[0], ts[0])));
    }
    if ss[0] < 2 {
        return Err(Error::config("distance consistency needs at least two samples"));
    }
    let n = ss[0];
    let log_p = distance_log_probs(src);
    let log_q = distance_log_probs(tgt);
    // diagonal log-probabilities are zero in both, so those cells drop out
    let kl = log_p.exp() * (log_p - log_q);
    Ok(kl.sum_all().scale(1.0 / n as f64))
}

/// Gradient-free evaluation of [`distance_consistency_loss`].
pub fn distance_consistency_value<T: Real>(src: &Tensor<T>, tgt: &Tensor<T>) -> Result<f64> {
    let tape = Tape::new();
    Ok(distance_consistency_loss(tape.constant(src.clone()), tape.constant(tgt.clone()))?.item())
}

fn latent_codes(spec: &LatentSpec, seed: u64, iteration: usize, batch: usize) -> Vec<LatentCode> {
    let base = rng::derive(seed, "adapt-latents");
    (0..batch)
        .map(|b| sample_latent(spec, rng::mix(base ^ rng::mix((iteration * batch + b) as u64))))
        .collect()
}

fn real_batch<'a>(images: &'a [Image], seed: u64, iteration: usize, batch: usize) -> Vec<&'a Image> {
    let mut r = rng::stream(rng::derive(seed, "adapt-real"), iteration as u64);
    (0..batch).map(|_| &images[r.random_range(0..images.len())]).collect()
}

fn grads_of<T: Real>(g: &crate::autograd::Gradients<T>, vars: &[Var<'_, T>]) -> Vec<Tensor<T>> {
    vars.iter().map(|v| g.get_or_zeros(v, &v.shape())).collect()
}

fn check_finite(iteration: usize, losses: &[(&str, f64)], g: &Generator<impl Real>) -> Result<()> {
    if losses.iter().all(|(_, v)| v.is_finite()) {
        return Ok(());
    }
    Err(Error::Divergence(Box::new(DivergenceDump {
        iteration,
        reason: "non-finite loss".into(),
        losses: losses.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        student_param_norms: g.params().norms(),
    })))
}

/// Shared adversarial loop. `reference` is the frozen source generator when
/// adapting with the consistency regularizer.
fn adversarial_train<T: Real>(
    g: &mut Generator<T>,
    reference: Option<&Generator<T>>,
    images: &[Image],
    config: &AdaptConfig,
    disc: &DiscriminatorPairSpec,
    scale: PatchScale,
    tag: &str,
) -> Result<Vec<AdaptLogRow>> {
    config.validate()?;
    let res = g.resolution();
    if images.iter().any(|im| im.height != res || im.width != res) {
        return Err(Error::config(format!("training images must be {res}x{res}")));
    }
    let seed = rng::derive(config.seed, tag);
    let mut d = build_patch_discriminator::<T>(scale, disc, res, rng::derive(seed, "disc-init"))?;
    let mut g_opt = Adam::new(config.adam(config.generator_lr), g.params());
    let mut d_opt = Adam::new(config.adam(config.discriminator_lr), d.params());
    let w = LossWeights::default();
    let latent = g.spec().latent;
    let mut log = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let z: Tensor<T> = latent_batch(&latent_codes(&latent, seed, it, config.batch));
        let real: Tensor<T> = batch_tensor(&real_batch(images, seed, it, config.batch));

        let tape = Tape::new();
        let gp = g.params().bind(&tape, true);
        let dp = d.params().bind(&tape, true);
        let zv = tape.constant(z.clone());
        let out = g.forward(&gp, zv);

        let d_loss = lsgan_d_loss(d.forward(&dp, tape.constant(real)), d.forward(&dp, out.image.detach()), &w);
        let adv = lsgan_g_loss(d.forward(&dp, out.image), &w);
        let (g_loss, consistency) = match reference {
            Some(src) if config.consistency_weight > 0.0 => {
                let sp = src.params().bind(&tape, false);
                let src_feats = src.forward(&sp, zv).penultimate;
                let c = distance_consistency_loss(src_feats, out.penultimate)?;
                (adv + c * config.consistency_weight, c.item())
            }
            _ => (adv, 0.0),
        };
        let row = AdaptLogRow { iteration: it, adversarial: adv.item(), consistency, discriminator: d_loss.item() };
        check_finite(it, &[("adversarial", row.adversarial), ("consistency", consistency), ("discriminator", row.discriminator)], g)?;

        let dg = d_loss.backward();
        let gg = g_loss.backward();
        d_opt.update(d.params_mut(), &grads_of(&dg, &dp))?;
        g_opt.update(g.params_mut(), &grads_of(&gg, &gp))?;
        log.push(row);
    }
    Ok(log)
}

/// Train a generator on source-domain images with a least-squares GAN
/// against a coarse-patch discriminator.
pub fn pretrain_source<T: Real>(
    g: &Generator<T>,
    images: &[Image],
    config: &AdaptConfig,
    disc: &DiscriminatorPairSpec,
) -> Result<(Generator<T>, Vec<AdaptLogRow>)> {
    if images.is_empty() {
        return Err(Error::config("source pretraining needs a nonempty image set"));
    }
    let mut out = clone_generator(g);
    let log = adversarial_train(&mut out, None, images, config, disc, PatchScale::Coarse, "pretrain")?;
    Ok((out, log))
}

/// Clone `g_source` and fine-tune the clone on `target_images` (1 to 20 of
/// them) with a fine-patch adversarial loss plus the weighted
/// distance-consistency term against the frozen source on shared latents.
pub fn adapt<T: Real>(
    g_source: &Generator<T>,
    target_images: &[Image],
    config: &AdaptConfig,
    disc: &DiscriminatorPairSpec,
) -> Result<(Generator<T>, Vec<AdaptLogRow>)> {
    if target_images.is_empty() || target_images.len() > 20 {
        return Err(Error::config(format!(
            "adaptation takes 1 to 20 target images, got {}",
            target_images.len()
        )));
    }
    let mut g_target = clone_generator(g_source);
    let log = adversarial_train(&mut g_target, Some(g_source), target_images, config, disc, PatchScale::Fine, "adapt")?;
    Ok((g_target, log))
}

/// Mean distance-consistency KL between two generators' penultimate
/// features over `batches` shared latent batches.
pub fn consistency_gap<T: Real>(g_source: &Generator<T>, g_target: &Generator<T>, batch: usize, batches: usize, seed: u64) -> Result<f64> {
    let latent = g_source.spec().latent;
    let mut total = 0.0;
    for b in 0..batches {
        let z: Tensor<T> = latent_batch(&latent_codes(&latent, rng::derive(seed, "gap"), b, batch));
        let tape = Tape::new();
        let zv = tape.constant(z);
        let sp = g_source.params().bind(&tape, false);
        let tp = g_target.params().bind(&tape, false);
        let fs = g_source.forward(&sp, zv).penultimate;
        let ft = g_target.forward(&tp, zv).penultimate;
        total += distance_consistency_loss(fs, ft)?.item();
    }
    Ok(total / batches as f64)
}
