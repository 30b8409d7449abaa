use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    combined_adv_loss, combined_per_loss, lsgan_d_loss, lsgan_g_loss, perceptual_loss, total_loss, BatchSource,
    LossWeights, RoutedTerm, SamplingSchedule,
};
use crate::augment::AugmentedPairStream;
use crate::autograd::{Gradients, Tape, Var};
use crate::datagen::{batch_tensor, ImagePair, PairedDataset};
use crate::error::{DivergenceDump, Error, Result};
use crate::nets::{
    build_feature_extractor, build_patch_discriminator, build_student, load_params, save_params,
    DiscriminatorPairSpec, FeatureExtractor, FeatureExtractorSpec, Generator, Network, ParamSet,
    PatchDiscriminator, PatchScale, Student, StudentTranslatorSpec,
};
use crate::optim::{Adam, AdamConfig};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Ablation modes: anchor data only, augmented data only, or both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistillMode {
    #[serde(rename = "BL")]
    Baseline,
    #[serde(rename = "Aug")]
    Augmented,
    #[serde(rename = "Aug+Anchor")]
    AugAnchor,
}

impl DistillMode {
    pub const ALL: [DistillMode; 3] = [DistillMode::Baseline, DistillMode::Augmented, DistillMode::AugAnchor];

    pub fn uses_anchors(self) -> bool {
        self != DistillMode::Augmented
    }

    pub fn uses_teachers(self) -> bool {
        self != DistillMode::Baseline
    }
}

impl fmt::Display for DistillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistillMode::Baseline => "BL",
            DistillMode::Augmented => "Aug",
            DistillMode::AugAnchor => "Aug+Anchor",
        })
    }
}

impl FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bl" | "baseline" => Ok(DistillMode::Baseline),
            "aug" => Ok(DistillMode::Augmented),
            "aug+anchor" | "aug-anchor" | "aug_anchor" => Ok(DistillMode::AugAnchor),
            _ => Err(Error::config(format!("unknown distillation mode `{s}` (BL, Aug, Aug+Anchor)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub mode: DistillMode,
    pub iterations: usize,
    pub batch: usize,
    pub weights: LossWeights,
    pub schedule: SamplingSchedule,
    pub student: StudentTranslatorSpec,
    pub extractor: FeatureExtractorSpec,
    pub discriminators: DiscriminatorPairSpec,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub seed: u64,
    /// Save a training checkpoint every this many iterations (0 = never).
    pub checkpoint_every: usize,
    /// Draw augmented batches from a fixed pool of this many pairs instead of
    /// the live stream (0 = live stream).
    pub augment_pool: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            mode: DistillMode::AugAnchor,
            iterations: 30_000,
            batch: 8,
            weights: LossWeights::default(),
            schedule: SamplingSchedule::default(),
            student: StudentTranslatorSpec::default(),
            extractor: FeatureExtractorSpec::default(),
            discriminators: DiscriminatorPairSpec::default(),
            generator_lr: 2e-4,
            discriminator_lr: 2e-4,
            seed: 0,
            checkpoint_every: 0,
            augment_pool: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch must be >= 1"));
        }
        if !(self.generator_lr > 0.0 && self.discriminator_lr > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        self.weights.validate()?;
        self.schedule.validate()?;
        self.discriminators.validate()
    }

    /// Data source of iteration `i` under this mode.
    pub fn source_at(&self, i: usize) -> BatchSource {
        match self.mode {
            DistillMode::Baseline => BatchSource::Anchor,
            DistillMode::Augmented => BatchSource::Augmented,
            DistillMode::AugAnchor => self.schedule.at(i as u64),
        }
    }
}

/// The few-shot ground-truth pairs, frozen for the whole run.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pairs: Vec<ImagePair>,
}

impl AnchorSet {
    pub fn new(pairs: Vec<ImagePair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::config("anchor set must hold at least one pair"));
        }
        Ok(Self { pairs })
    }

    pub fn from_dataset(ds: &PairedDataset) -> Result<Self> {
        Self::new(ds.pairs.clone())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    pub fn resolution(&self) -> usize {
        self.pairs[0].source.height
    }

    /// SHA-256 over every pixel of every pair.
    pub fn content_fingerprint(&self) -> String {
        crate::datagen::pairs_fingerprint(&self.pairs)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounters {
    pub anchor_steps: u64,
    pub augmented_steps: u64,
    pub fine_updates: u64,
    pub coarse_updates: u64,
    pub student_updates: u64,
    /// Pairs drawn from the anchor set.
    pub anchor_samples: u64,
    /// Pairs drawn from the augmentation stream or pool.
    pub augmented_samples: u64,
    pub augment_streams_built: u64,
}

/// One row of the training log. Terms that do not apply to the step's data
/// source are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub mode: String,
    pub source: BatchSource,
    pub adv_fine: f64,
    pub adv_crs: f64,
    pub per_anchor: f64,
    pub per_aug: f64,
    pub total: f64,
    pub d_loss: f64,
}

pub struct TrainState<T> {
    pub iteration: usize,
    pub student: Student<T>,
    pub d_fine: PatchDiscriminator<T>,
    pub d_crs: PatchDiscriminator<T>,
    pub opt_student: Adam<T>,
    pub opt_fine: Adam<T>,
    pub opt_crs: Adam<T>,
    pub counters: UpdateCounters,
    pub history: Vec<LogRow>,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    iteration: usize,
    adam_steps: [u64; 3],
    counters: UpdateCounters,
    history: Vec<LogRow>,
}

const NETS: [&str; 3] = ["student", "d_fine", "d_crs"];

impl<T: Real> TrainState<T> {
    pub fn new(config: &DistillConfig, resolution: usize) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let student = build_student(&config.student, resolution, rng::derive(seed, "student"))?;
        let d_fine = build_patch_discriminator(PatchScale::Fine, &config.discriminators, resolution, rng::derive(seed, "d_fine"))?;
        let d_crs =
            build_patch_discriminator(PatchScale::Coarse, &config.discriminators, resolution, rng::derive(seed, "d_crs"))?;
        let g = AdamConfig { lr: config.generator_lr, ..AdamConfig::default() };
        let d = AdamConfig { lr: config.discriminator_lr, ..AdamConfig::default() };
        Ok(Self {
            iteration: 0,
            opt_student: Adam::new(g, student.params()),
            opt_fine: Adam::new(d, d_fine.params()),
            opt_crs: Adam::new(d, d_crs.params()),
            student,
            d_fine,
            d_crs,
            counters: UpdateCounters::default(),
            history: Vec::new(),
        })
    }

    fn parts(&self) -> [(&dyn NetParams<T>, &Adam<T>); 3] {
        [(&self.student, &self.opt_student), (&self.d_fine, &self.opt_fine), (&self.d_crs, &self.opt_crs)]
    }

    /// Write networks, optimizer moments, counters and history under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, (net, opt)) in NETS.iter().zip(self.parts()) {
            let (arch, fp) = (net.arch(), net.fingerprint());
            save_params(&dir.join(name), net.param_set(), &arch, &fp, BTreeMap::new())?;
            save_params(&dir.join(format!("{name}.adam_m")), &opt.m, &arch, &fp, BTreeMap::new())?;
            save_params(&dir.join(format!("{name}.adam_v")), &opt.v, &arch, &fp, BTreeMap::new())?;
        }
        let file = StateFile {
            iteration: self.iteration,
            adam_steps: [self.opt_student.step, self.opt_fine.step, self.opt_crs.step],
            counters: self.counters.clone(),
            history: self.history.clone(),
        };
        let path = dir.join("state.json");
        fs::write(&path, serde_json::to_string(&file).expect("state serializes")).map_err(|e| Error::io(&path, e))
    }

    /// Restore a state written by [`TrainState::save`] for the same config.
    pub fn load(dir: &Path, config: &DistillConfig, resolution: usize) -> Result<Self> {
        let mut s = Self::new(config, resolution)?;
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::config(format!("missing training state {}: {e}", path.display())))?;
        let file: StateFile = serde_json::from_str(&text)
            .map_err(|e| Error::ingestion(format!("corrupt training state {}: {e}", path.display())))?;
        let fps: Vec<String> = s.parts().iter().map(|(n, _)| n.fingerprint()).collect();
        let load = |sub: String, fp: &str| -> Result<ParamSet<T>> { Ok(load_params(&dir.join(sub), fp)?.0) };
        *s.student.params_mut() = load("student".into(), &fps[0])?;
        *s.d_fine.params_mut() = load("d_fine".into(), &fps[1])?;
        *s.d_crs.params_mut() = load("d_crs".into(), &fps[2])?;
        for (i, (name, opt)) in NETS.iter().zip([&mut s.opt_student, &mut s.opt_fine, &mut s.opt_crs]).enumerate() {
            opt.m = load(format!("{name}.adam_m"), &fps[i])?;
            opt.v = load(format!("{name}.adam_v"), &fps[i])?;
            opt.step = file.adam_steps[i];
        }
        s.iteration = file.iteration;
        s.counters = file.counters;
        s.history = file.history;
        Ok(s)
    }
}

trait NetParams<T: Real> {
    fn param_set(&self) -> &ParamSet<T>;
    fn arch(&self) -> String;
    fn fingerprint(&self) -> String;
}

impl<T: Real, N: Network<T>> NetParams<T> for N {
    fn param_set(&self) -> &ParamSet<T> {
        self.params()
    }
    fn arch(&self) -> String {
        self.architecture()
    }
    fn fingerprint(&self) -> String {
        self.architecture_fingerprint()
    }
}

enum AugmentSource<'g, T: Real> {
    Stream(AugmentedPairStream<'g, T>),
    Pool { source: Vec<Tensor<T>>, target: Vec<Tensor<T>> },
}

/// Everything a training step needs besides the mutable state.
pub struct Trainer<'a, T: Real> {
    config: DistillConfig,
    anchors: Option<&'a AnchorSet>,
    augment: Option<AugmentSource<'a, T>>,
    extractor: FeatureExtractor<T>,
    resolution: usize,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Check that the inputs required by `config.mode` are present. The
    /// augmentation stream is only built for modes that use teachers.
    pub fn new(
        config: &DistillConfig,
        anchors: Option<&'a AnchorSet>,
        teachers: Option<(&'a Generator<T>, &'a Generator<T>)>,
        counters: &mut UpdateCounters,
    ) -> Result<Self> {
        config.validate()?;
        let mode = config.mode;
        if mode.uses_anchors() && anchors.is_none() {
            return Err(Error::config(format!("mode {mode} needs an anchor set")));
        }
        if mode.uses_teachers() && teachers.is_none() {
            return Err(Error::config(format!("mode {mode} needs source and target teacher checkpoints")));
        }
        let mut augment = None;
        let mut resolution = anchors.map(|a| a.resolution());
        if mode.uses_teachers() {
            let (gs, gt) = teachers.expect("checked above");
            let mut stream = AugmentedPairStream::new(gs, gt, rng::derive(config.seed, "augment-stream"))?;
            counters.augment_streams_built += 1;
            if let Some(r) = resolution {
                if r != stream.resolution() {
                    return Err(Error::config(format!(
                        "anchor resolution {r} differs from teacher resolution {}",
                        stream.resolution()
                    )));
                }
            }
            resolution = Some(stream.resolution());
            augment = Some(if config.augment_pool > 0 {
                let b = stream.sample_batch(config.augment_pool)?;
                let split = |t: &Tensor<T>| (0..config.augment_pool).map(|i| t.index0(i)).collect::<Vec<_>>();
                AugmentSource::Pool { source: split(&b.source), target: split(&b.target) }
            } else {
                AugmentSource::Stream(stream)
            });
        }
        Ok(Self {
            config: config.clone(),
            anchors,
            augment,
            extractor: build_feature_extractor(&config.extractor)?,
            resolution: resolution.expect("some input present"),
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn config(&self) -> &DistillConfig {
        &self.config
    }

    /// `(inputs, targets)` for iteration `it`, each `[batch, C, H, W]`.
    fn batch(&mut self, source: BatchSource, it: usize, counters: &mut UpdateCounters) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = self.config.batch;
        match source {
            BatchSource::Anchor => {
                let anchors = self
                    .anchors
                    .ok_or_else(|| Error::contract(format!("anchor batch requested in mode {}", self.config.mode)))?;
                let mut r = rng::stream(rng::derive(self.config.seed, "anchor-batch"), it as u64);
                let picks: Vec<&ImagePair> = (0..n).map(|_| &anchors.pairs[r.random_range(0..anchors.len())]).collect();
                counters.anchor_samples += n as u64;
                let src: Vec<_> = picks.iter().map(|p| &p.source).collect();
                let tgt: Vec<_> = picks.iter().map(|p| &p.target).collect();
                Ok((batch_tensor(&src), batch_tensor(&tgt)))
            }
            BatchSource::Augmented => {
                let mode = self.config.mode;
                let aug = self
                    .augment
                    .as_mut()
                    .ok_or_else(|| Error::contract(format!("augmented batch requested in mode {mode}")))?;
                counters.augmented_samples += n as u64;
                match aug {
                    AugmentSource::Stream(s) => {
                        s.seek((it * n) as u64);
                        let b = s.sample_batch(n)?;
                        Ok((b.source, b.target))
                    }
                    AugmentSource::Pool { source, target } => {
                        let mut r = rng::stream(rng::derive(self.config.seed, "pool-batch"), it as u64);
                        let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..source.len())).collect();
                        let pick = |v: &[Tensor<T>]| Tensor::stack(&idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>());
                        Ok((pick(source), pick(target)))
                    }
                }
            }
        }
    }
}

fn grads_of<T: Real>(g: &Gradients<T>, vars: &[Var<'_, T>]) -> Vec<Tensor<T>> {
    vars.iter().map(|v| g.get_or_zeros(v, &v.shape())).collect()
}

/// One iteration on a batch from `source`: a least-squares update of the
/// discriminator that owns this kind of data, then a student update on the
/// weighted adversarial plus perceptual objective.
pub fn train_step<T: Real>(state: &mut TrainState<T>, trainer: &mut Trainer<'_, T>, source: BatchSource) -> Result<()> {
    let it = state.iteration;
    let (x, y) = trainer.batch(source, it, &mut state.counters)?;
    let w = trainer.config.weights;
    let d = match source.discriminator() {
        PatchScale::Fine => &state.d_fine,
        PatchScale::Coarse => &state.d_crs,
    };

    let tape = Tape::new();
    let sp = state.student.params().bind(&tape, true);
    let dp = d.params().bind(&tape, true);
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let fake = state.student.forward(&sp, xv);

    let d_loss = lsgan_d_loss(d.forward(&dp, yv), d.forward(&dp, fake.detach()), &w);
    let adv = lsgan_g_loss(d.forward(&dp, fake), &w);
    let per = perceptual_loss(&tape, &trainer.extractor, fake, yv)?;
    let zero = tape.constant(Tensor::zeros(adv.shape()));
    let (adv_total, per_total) = match source {
        BatchSource::Anchor => (
            combined_adv_loss(
                RoutedTerm::new(adv, source, d.scale()),
                RoutedTerm::new(zero, BatchSource::Augmented, PatchScale::Coarse),
                &w,
            )?,
            combined_per_loss(per, zero, &w),
        ),
        BatchSource::Augmented => (
            combined_adv_loss(
                RoutedTerm::new(zero, BatchSource::Anchor, PatchScale::Fine),
                RoutedTerm::new(adv, source, d.scale()),
                &w,
            )?,
            combined_per_loss(zero, per, &w),
        ),
    };
    let total = total_loss(adv_total, per_total, &w);

    let (a, p) = (adv.item(), per.item());
    let anchor = source == BatchSource::Anchor;
    let row = LogRow {
        iteration: it,
        mode: trainer.config.mode.to_string(),
        source,
        adv_fine: if anchor { a } else { 0.0 },
        adv_crs: if anchor { 0.0 } else { a },
        per_anchor: if anchor { p } else { 0.0 },
        per_aug: if anchor { 0.0 } else { p },
        total: total.item(),
        d_loss: d_loss.item(),
    };
    if ![row.total, row.d_loss, a, p].iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence(Box::new(DivergenceDump {
            iteration: it,
            reason: format!("non-finite loss on {} batch", source.name()),
            losses: vec![
                ("adversarial".into(), a),
                ("perceptual".into(), p),
                ("total".into(), row.total),
                ("discriminator".into(), row.d_loss),
            ],
            student_param_norms: state.student.params().norms(),
        })));
    }

    let d_grads = grads_of(&d_loss.backward(), &dp);
    let s_grads = grads_of(&total.backward(), &sp);
    drop(tape);
    match source.discriminator() {
        PatchScale::Fine => {
            state.opt_fine.update(state.d_fine.params_mut(), &d_grads)?;
            state.counters.fine_updates += 1;
        }
        PatchScale::Coarse => {
            state.opt_crs.update(state.d_crs.params_mut(), &d_grads)?;
            state.counters.coarse_updates += 1;
        }
    }
    state.opt_student.update(state.student.params_mut(), &s_grads)?;
    state.counters.student_updates += 1;
    match source {
        BatchSource::Anchor => state.counters.anchor_steps += 1,
        BatchSource::Augmented => state.counters.augmented_steps += 1,
    }
    state.history.push(row);
    state.iteration += 1;
    Ok(())
}

/// Run `trainer`'s schedule from `state.iteration` up to the configured
/// iteration count, checkpointing into `checkpoint_dir/iter_XXXXXX` at the
/// configured interval.
pub fn run<T: Real>(state: &mut TrainState<T>, trainer: &mut Trainer<'_, T>, checkpoint_dir: Option<&Path>) -> Result<()> {
    let every = trainer.config.checkpoint_every;
    while state.iteration < trainer.config.iterations {
        let source = trainer.config.source_at(state.iteration);
        train_step(state, trainer, source)?;
        if let Some(dir) = checkpoint_dir {
            if every > 0 && state.iteration % every == 0 {
                state.save(&dir.join(format!("iter_{:06}", state.iteration)))?;
            }
        }
    }
    Ok(())
}

/// Train a student from scratch under `config`.
pub fn train<T: Real>(
    config: &DistillConfig,
    anchors: Option<&AnchorSet>,
    teachers: Option<(&Generator<T>, &Generator<T>)>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainState<T>> {
    let mut counters = UpdateCounters::default();
    let mut trainer = Trainer::new(config, anchors, teachers, &mut counters)?;
    let mut state = TrainState::new(config, trainer.resolution())?;
    state.counters = counters;
    run(&mut state, &mut trainer, checkpoint_dir)?;
    Ok(state)
}

pub fn write_train_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::adapt::csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| crate::adapt::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
