use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptConfig;
use crate::datagen::{BackgroundMode, OracleTransform, SyntheticSpec};
use crate::distill::{DistillConfig, DistillMode, LabelConvention, LossWeights, SamplingSchedule, ScheduleMode};
use crate::error::{Error, Result};
use crate::metrics::default_eval_extractor_spec;
use crate::nets::{
    ConvLayer, DiscriminatorPairSpec, ExtractorKind, FeatureExtractorSpec, LatentSpec, PatchDiscriminatorSpec,
    PatchScale, StudentTranslatorSpec, TeacherGeneratorSpec,
};

/// Every setting of a pipeline run in one flat document. Each key has a
/// default; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds anchor selection, adaptation and distillation.
    pub seed: u64,
    /// Seeds the synthetic train pool, test set and teacher source images.
    pub data_seed: u64,
    /// Seeds source-teacher initialization and pretraining.
    pub pretrain_seed: u64,
    pub out_dir: PathBuf,
    /// Single-threaded, fixed reduction order. The implementation is always
    /// deterministic; the flag is recorded for provenance.
    pub deterministic: bool,

    // data
    pub resolution: usize,
    pub num_shapes: usize,
    pub palette_seed: u64,
    pub background_mode: BackgroundMode,
    pub oracle: OracleTransform,
    pub train_pool: usize,
    pub test_size: usize,
    /// Target images used to adapt the teacher (at most 20).
    pub k_shot: usize,
    /// Anchor pairs available to the student.
    pub data_scale: usize,
    pub teacher_source_images: usize,
    /// Optional real paired folders replacing the synthetic train pool.
    pub source_dir: Option<PathBuf>,
    pub target_dir: Option<PathBuf>,

    // teachers
    pub latent_dim: usize,
    pub teacher_widths: Vec<usize>,
    pub pretrain_iterations: usize,
    pub pretrain_batch: usize,
    pub pretrain_generator_lr: f64,
    pub pretrain_discriminator_lr: f64,
    pub adapt_iterations: usize,
    pub adapt_batch: usize,
    pub consistency_weight: f64,
    pub adapt_generator_lr: f64,
    pub adapt_discriminator_lr: f64,

    // discriminators, as [kernel, stride] pairs
    pub fine_layers: Vec<[usize; 2]>,
    pub coarse_layers: Vec<[usize; 2]>,
    pub disc_base_channels: usize,

    // student
    pub student_encoder_widths: Vec<usize>,
    pub student_decoder_widths: Vec<usize>,
    pub student_skip_connections: bool,

    // distillation
    pub mode: DistillMode,
    pub iterations: usize,
    pub batch: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    pub label_convention: LabelConvention,
    pub schedule_mode: ScheduleMode,
    pub ratio_in: u32,
    pub ratio_out: u32,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub checkpoint_every: usize,
    pub augment_pool: usize,
    /// Pairs written by the augment stage.
    pub augment_export: usize,

    // feature extractors
    pub extractor_seed: u64,
    pub extractor_path: Option<PathBuf>,
    pub extractor_layers: Vec<[usize; 3]>,
    pub extractor_taps: Vec<usize>,
    pub eval_extractor_seed: u64,
    pub contact_sheet_rows: usize,

    // ablation sweep
    pub ablation_scales: Vec<usize>,
    pub ablation_seeds: Vec<u64>,
    pub ablation_modes: Vec<DistillMode>,
    pub trend_min_gap: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let teacher = TeacherGeneratorSpec::default();
        let adapt = AdaptConfig::default();
        let distill = DistillConfig::default();
        let disc = DiscriminatorPairSpec::default();
        let ex = FeatureExtractorSpec::default();
        let layers = |d: &PatchDiscriminatorSpec| d.conv_layers.iter().map(|l| [l.kernel, l.stride]).collect();
        let eval_seed = match default_eval_extractor_spec().kind {
            ExtractorKind::FixedRandom { seed } => seed,
            ExtractorKind::ExternalPretrained { .. } => 0,
        };
        Self {
            seed: 0,
            data_seed: 0,
            pretrain_seed: 0,
            out_dir: PathBuf::from("runs/default"),
            deterministic: true,
            resolution: synth.resolution,
            num_shapes: synth.num_shapes,
            palette_seed: synth.palette_seed,
            background_mode: synth.background_mode,
            oracle: OracleTransform::EdgeSketch { strength: 0.6 },
            train_pool: 360,
            test_size: 400,
            k_shot: 20,
            data_scale: 20,
            teacher_source_images: 512,
            source_dir: None,
            target_dir: None,
            latent_dim: teacher.latent.dim,
            teacher_widths: teacher.channel_widths,
            pretrain_iterations: 10_000,
            pretrain_batch: 8,
            pretrain_generator_lr: 2e-4,
            pretrain_discriminator_lr: 2e-4,
            adapt_iterations: adapt.iterations,
            adapt_batch: adapt.batch,
            consistency_weight: adapt.consistency_weight,
            adapt_generator_lr: adapt.generator_lr,
            adapt_discriminator_lr: adapt.discriminator_lr,
            fine_layers: layers(&disc.fine),
            coarse_layers: layers(&disc.coarse),
            disc_base_channels: disc.fine.base_channels,
            student_encoder_widths: distill.student.encoder_widths,
            student_decoder_widths: distill.student.decoder_widths,
            student_skip_connections: distill.student.skip_connections,
            mode: distill.mode,
            iterations: distill.iterations,
            batch: distill.batch,
            lambda1: distill.weights.lambda1,
            lambda2: distill.weights.lambda2,
            mu: distill.weights.mu,
            label_convention: distill.weights.labels,
            schedule_mode: distill.schedule.mode,
            ratio_in: distill.schedule.ratio_in,
            ratio_out: distill.schedule.ratio_out,
            generator_lr: distill.generator_lr,
            discriminator_lr: distill.discriminator_lr,
            checkpoint_every: distill.checkpoint_every,
            augment_pool: distill.augment_pool,
            augment_export: 360,
            extractor_seed: match ex.kind {
                ExtractorKind::FixedRandom { seed } => seed,
                ExtractorKind::ExternalPretrained { .. } => 0,
            },
            extractor_path: None,
            extractor_layers: ex.layers.iter().map(|&(c, k, s)| [c, k, s]).collect(),
            extractor_taps: ex.layer_taps,
            eval_extractor_seed: eval_seed,
            contact_sheet_rows: 8,
            ablation_scales: vec![360, 180, 90, 45, 20],
            ablation_seeds: vec![0, 1, 2],
            ablation_modes: DistillMode::ALL.to_vec(),
            trend_min_gap: 0.01,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a TOML config, or the resolved config recorded in a run manifest
    /// when `path` ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = super::RunManifest::read(path)?.config;
            cfg.validate()?;
            return Ok(cfg);
        }
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config renders")
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic_spec().validate()?;
        self.oracle.validate()?;
        self.teacher_spec().base_resolution()?;
        self.adapt_config(false).validate()?;
        self.adapt_config(true).validate()?;
        self.discriminators().validate()?;
        self.student_spec().validate(self.resolution)?;
        self.distill_config(self.mode, self.seed).validate()?;
        if self.k_shot < 1 || self.k_shot > 20 {
            return Err(Error::config(format!("k_shot must be in 1..=20, got {}", self.k_shot)));
        }
        if self.k_shot > self.train_pool {
            return Err(Error::config("k_shot exceeds the train pool"));
        }
        if self.data_scale < 1 || self.data_scale > self.train_pool {
            return Err(Error::config(format!("data_scale must be in 1..={}", self.train_pool)));
        }
        if self.augment_export < 1 {
            return Err(Error::config("augment_export must be >= 1"));
        }
        if self.test_size < 1 || self.teacher_source_images < 1 {
            return Err(Error::config("test_size and teacher_source_images must be >= 1"));
        }
        if self.source_dir.is_some() != self.target_dir.is_some() {
            return Err(Error::config("source_dir and target_dir must be given together"));
        }
        if let Some(&bad) = self.ablation_scales.iter().find(|&&s| s < 1 || s > self.train_pool) {
            return Err(Error::config(format!("ablation scale {bad} outside 1..={}", self.train_pool)));
        }
        if self.ablation_scales.is_empty() || self.ablation_seeds.is_empty() || self.ablation_modes.is_empty() {
            return Err(Error::config("ablation scales, seeds and modes must be nonempty"));
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            resolution: self.resolution,
            num_shapes: self.num_shapes,
            palette_seed: self.palette_seed,
            background_mode: self.background_mode,
        }
    }

    pub fn teacher_spec(&self) -> TeacherGeneratorSpec {
        TeacherGeneratorSpec {
            latent: LatentSpec { dim: self.latent_dim },
            channel_widths: self.teacher_widths.clone(),
            output_resolution: self.resolution,
            channels: 3,
        }
    }

    /// Settings for source pretraining (`adapt = false`) or adaptation.
    pub fn adapt_config(&self, adapt: bool) -> AdaptConfig {
        if adapt {
            AdaptConfig {
                iterations: self.adapt_iterations,
                batch: self.adapt_batch,
                consistency_weight: self.consistency_weight,
                generator_lr: self.adapt_generator_lr,
                discriminator_lr: self.adapt_discriminator_lr,
                seed: self.seed,
            }
        } else {
            AdaptConfig {
                iterations: self.pretrain_iterations,
                batch: self.pretrain_batch,
                consistency_weight: 0.0,
                generator_lr: self.pretrain_generator_lr,
                discriminator_lr: self.pretrain_discriminator_lr,
                seed: self.pretrain_seed,
            }
        }
    }

    pub fn discriminators(&self) -> DiscriminatorPairSpec {
        let spec = |layers: &[[usize; 2]], scale| PatchDiscriminatorSpec {
            conv_layers: layers.iter().map(|&[k, s]| ConvLayer::new(k, s)).collect(),
            base_channels: self.disc_base_channels,
            patch_scale: scale,
            in_channels: 3,
        };
        DiscriminatorPairSpec { fine: spec(&self.fine_layers, PatchScale::Fine), coarse: spec(&self.coarse_layers, PatchScale::Coarse) }
    }

    pub fn student_spec(&self) -> StudentTranslatorSpec {
        StudentTranslatorSpec {
            encoder_widths: self.student_encoder_widths.clone(),
            decoder_widths: self.student_decoder_widths.clone(),
            skip_connections: self.student_skip_connections,
            channels: 3,
        }
    }

    fn extractor(&self, seed: u64) -> FeatureExtractorSpec {
        FeatureExtractorSpec {
            kind: ExtractorKind::FixedRandom { seed },
            layer_taps: self.extractor_taps.clone(),
            layers: self.extractor_layers.iter().map(|&[c, k, s]| (c, k, s)).collect(),
            in_channels: 3,
        }
    }

    /// Extractor for the perceptual training loss.
    pub fn extractor_spec(&self) -> FeatureExtractorSpec {
        match &self.extractor_path {
            Some(p) => FeatureExtractorSpec { kind: ExtractorKind::ExternalPretrained { path: p.clone() }, ..self.extractor(0) },
            None => self.extractor(self.extractor_seed),
        }
    }

    /// Extractor for perceptual distance and Fréchet distance reports.
    pub fn eval_extractor_spec(&self) -> FeatureExtractorSpec {
        self.extractor(self.eval_extractor_seed)
    }

    pub fn distill_config(&self, mode: DistillMode, seed: u64) -> DistillConfig {
        DistillConfig {
            mode,
            iterations: self.iterations,
            batch: self.batch,
            weights: LossWeights { lambda1: self.lambda1, lambda2: self.lambda2, mu: self.mu, labels: self.label_convention },
            schedule: SamplingSchedule { ratio_in: self.ratio_in, ratio_out: self.ratio_out, mode: self.schedule_mode, seed },
            student: self.student_spec(),
            extractor: self.extractor_spec(),
            discriminators: self.discriminators(),
            generator_lr: self.generator_lr,
            discriminator_lr: self.discriminator_lr,
            seed,
            checkpoint_every: self.checkpoint_every,
            augment_pool: self.augment_pool,
        }
    }
}
