use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{digest, digest_json};
use super::{RunConfig, RunManifest};
use crate::adapt::{adapt, pretrain_source, write_adapt_log};
use crate::augment::{export_augmented_set, AugmentedPairStream};
use crate::datagen::{
    build_paired_dataset, generate_source_image, item_seed, load_image_folder, read_dataset, read_png, split,
    unbatch, write_dataset, write_png, Image, PairedDataset,
};
use crate::distill::{run, write_train_log, AnchorSet, DistillMode, TrainState, Trainer, UpdateCounters};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_student, read_eval_csv, trend_report, write_contact_sheet, write_eval_csv, write_trend_report, EvalRow,
    TrendReport,
};
use crate::nets::{
    build_feature_extractor, build_student, build_teacher_generator, load_network, read_header, save_network,
    Generator, Network, Student,
};
use crate::rng;

/// Where every stage reads and writes under `out_dir`.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("data/train")
    }

    pub fn test(&self) -> PathBuf {
        self.root.join("data/test")
    }

    pub fn teacher_source_images(&self) -> PathBuf {
        self.root.join("data/teacher_source")
    }

    pub fn anchors(&self, n: usize, seed: u64) -> PathBuf {
        self.root.join(format!("data/anchors_n{n}_s{seed}"))
    }

    pub fn source_teacher(&self) -> PathBuf {
        self.root.join("teachers/source")
    }

    pub fn target_teacher(&self, k: usize, seed: u64) -> PathBuf {
        self.root.join(format!("teachers/target_k{k}_s{seed}"))
    }

    pub fn augment(&self, k: usize, seed: u64) -> PathBuf {
        self.root.join(format!("augment/k{k}_s{seed}"))
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run(&self, cfg: &RunConfig) -> PathBuf {
        self.runs().join(run_name(cfg))
    }

    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation")
    }

    pub fn manifest(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{name}.json"))
    }

    fn rel(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.root).unwrap_or(p).to_path_buf()
    }
}

/// Directory name of a distillation run. Only the inputs a mode actually
/// consumes appear in it, so Aug runs are shared across data scales.
pub fn run_name(cfg: &RunConfig) -> String {
    let (k, n, s) = (cfg.k_shot, cfg.data_scale, cfg.seed);
    match cfg.mode {
        DistillMode::Baseline => format!("BL_n{n}_s{s}"),
        DistillMode::Augmented => format!("Aug_k{k}_s{s}"),
        DistillMode::AugAnchor => format!("AugAnchor_n{n}_k{k}_s{s}"),
    }
}

/// The `n`-pair anchor subset of `pool` for `seed`. Subsets for one seed are
/// nested: a smaller scale is a prefix of the same seeded permutation.
pub fn anchor_subset(pool: &PairedDataset, n: usize, seed: u64) -> Result<PairedDataset> {
    if n == pool.len() {
        return Ok(pool.clone());
    }
    Ok(split(pool, n, seed)?.0)
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_dir(dir: &Path, what: &str, hint: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::config(format!("missing {what} at {} ({hint})", dir.display())))
    }
}

fn image_key(img: &Image) -> [u8; 32] {
    let bytes: Vec<u8> = img.data.iter().map(|v| (v * 255.0).round() as u8).collect();
    Sha256::digest(&bytes).into()
}

fn images_fingerprint(images: &[Image]) -> String {
    let mut h = Sha256::new();
    for im in images {
        h.update(image_key(im));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn data_cache_key(cfg: &RunConfig) -> String {
    digest_json(&(
        cfg.synthetic_spec(),
        cfg.oracle.to_string(),
        cfg.train_pool,
        cfg.test_size,
        cfg.teacher_source_images,
        cfg.data_seed,
        &cfg.source_dir,
        &cfg.target_dir,
    ))
}

fn write_anchors(lay: &Layout, pool: &PairedDataset, n: usize, seed: u64) -> Result<String> {
    let anchors = anchor_subset(pool, n, seed)?;
    let dir = lay.anchors(n, seed);
    fresh_dir(&dir)?;
    write_dataset(&dir, &anchors, None, None)?;
    Ok(anchors.content_fingerprint())
}

/// Generate (or ingest) the train pool, the held-out test set, the
/// unpaired source images for teacher pretraining and the anchor folders
/// for `k_shot` and `data_scale`.
pub fn cmd_datagen(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let t0 = Instant::now();
    let lay = Layout::new(&cfg.out_dir);
    let spec = cfg.synthetic_spec();
    let synthetic = cfg.source_dir.is_none();
    let (pool, test, teacher_images) = match (&cfg.source_dir, &cfg.target_dir) {
        (Some(s), Some(t)) => {
            let all = load_image_folder(s, t, cfg.resolution)?;
            if all.len() <= cfg.train_pool {
                return Err(Error::ingestion(format!(
                    "{} holds {} pairs; more than train_pool = {} are needed to hold out a test set",
                    s.display(),
                    all.len(),
                    cfg.train_pool
                )));
            }
            let (train, rest) = split(&all, cfg.train_pool, cfg.data_seed)?;
            let test = if rest.len() > cfg.test_size { rest.truncated(cfg.test_size)? } else { rest };
            let images = train.pairs.iter().map(|p| p.source.clone()).collect();
            (train, test, images)
        }
        _ => {
            let pool = build_paired_dataset(&spec, &cfg.oracle, cfg.train_pool, rng::derive(cfg.data_seed, "train-pool"))?;
            let test = build_paired_dataset(&spec, &cfg.oracle, cfg.test_size, rng::derive(cfg.data_seed, "test-set"))?;
            let base = rng::derive(cfg.data_seed, "teacher-source");
            let images = (0..cfg.teacher_source_images)
                .map(|i| generate_source_image(&spec, item_seed(base, i)))
                .collect::<Result<Vec<_>>>()?;
            (pool, test, images)
        }
    };
    let pool_keys: HashSet<_> = pool.pairs.iter().map(|p| image_key(&p.source)).collect();
    if test.pairs.iter().any(|p| pool_keys.contains(&image_key(&p.source))) {
        return Err(Error::contract("test set overlaps the train pool"));
    }

    let (meta_spec, meta_oracle) = if synthetic { (Some(&spec), Some(&cfg.oracle)) } else { (None, None) };
    for (dir, ds) in [(lay.train(), &pool), (lay.test(), &test)] {
        fresh_dir(&dir)?;
        write_dataset(&dir, ds, meta_spec, meta_oracle)?;
    }
    let ts = lay.teacher_source_images();
    fresh_dir(&ts)?;
    for (i, im) in teacher_images.iter().enumerate() {
        write_png(&ts.join(format!("src_{i:05}.png")), im)?;
    }

    let mut m = RunManifest::new("datagen", cfg, data_cache_key(cfg));
    m.outputs.insert("train".into(), pool.content_fingerprint());
    m.outputs.insert("test".into(), test.content_fingerprint());
    m.outputs.insert("teacher_source".into(), images_fingerprint(&teacher_images));
    for n in [cfg.k_shot, cfg.data_scale] {
        let fp = write_anchors(&lay, &pool, n, cfg.seed)?;
        m.outputs.insert(format!("anchors_n{n}_s{}", cfg.seed), fp);
    }
    m.timings_secs.insert("datagen".into(), secs(t0));
    m.write(&lay.manifest("datagen"))?;
    Ok(m)
}

/// Run the data stage unless outputs for the same data settings exist.
fn ensure_data(cfg: &RunConfig) -> Result<()> {
    let lay = Layout::new(&cfg.out_dir);
    let fresh = RunManifest::cached(&lay.manifest("datagen"), &data_cache_key(cfg)).is_some()
        && lay.train().is_dir()
        && lay.test().is_dir();
    if !fresh {
        cmd_datagen(cfg)?;
    }
    Ok(())
}

fn load_pool(lay: &Layout) -> Result<PairedDataset> {
    require_dir(&lay.train(), "train pool", "run datagen first")?;
    Ok(read_dataset(&lay.train())?.0)
}

/// Anchor folder for (`n`, `seed`), written from the pool when absent.
fn load_anchors(lay: &Layout, n: usize, seed: u64, create: bool) -> Result<PairedDataset> {
    let dir = lay.anchors(n, seed);
    if !dir.is_dir() {
        if !create {
            return Err(Error::config(format!("missing anchor folder {} (run datagen first)", dir.display())));
        }
        write_anchors(lay, &load_pool(lay)?, n, seed)?;
    }
    Ok(read_dataset(&dir)?.0)
}

fn load_teacher_source_images(lay: &Layout, resolution: usize) -> Result<Vec<Image>> {
    let dir = lay.teacher_source_images();
    require_dir(&dir, "source dataset", "run datagen first")?;
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::config(format!("source dataset {} holds no images", dir.display())));
    }
    files.iter().map(|f| read_png(f, Some(resolution))).collect()
}

fn generator_dir(teacher_dir: &Path) -> PathBuf {
    teacher_dir.join("generator")
}

/// Load a teacher checkpoint, verifying architecture and content
/// fingerprints.
fn load_teacher(cfg: &RunConfig, dir: &Path) -> Result<(Generator<f32>, BTreeMap<String, String>)> {
    let mut g = build_teacher_generator::<f32>(&cfg.teacher_spec(), 0)?;
    let header = load_network(&mut g, &generator_dir(dir))?;
    Ok((g, header.metadata))
}

fn cached_teacher(cfg: &RunConfig, dir: &Path, key: &str) -> Option<Generator<f32>> {
    let header = read_header(&generator_dir(dir)).ok()?;
    if header.metadata.get("cache_key").map(String::as_str) != Some(key) {
        return None;
    }
    load_teacher(cfg, dir).ok().map(|(g, _)| g)
}

/// Pretrain the source teacher, or load it when a checkpoint for the same
/// images and settings exists.
fn ensure_source_teacher(cfg: &RunConfig, lay: &Layout) -> Result<(Generator<f32>, Option<RunManifest>)> {
    let images = load_teacher_source_images(lay, cfg.resolution)?;
    let pre = cfg.adapt_config(false);
    let disc = cfg.discriminators();
    let key = digest(&[&images_fingerprint(&images), &digest_json(&(cfg.teacher_spec(), &pre, &disc))]);
    let dir = lay.source_teacher();
    if let Some(g) = cached_teacher(cfg, &dir, &key) {
        return Ok((g, None));
    }
    let t0 = Instant::now();
    let init = build_teacher_generator::<f32>(&cfg.teacher_spec(), rng::derive(cfg.pretrain_seed, "teacher-init"))?;
    let (g, log) = pretrain_source(&init, &images, &pre, &disc)?;
    fresh_dir(&dir)?;
    let meta = BTreeMap::from([("cache_key".to_string(), key.clone())]);
    save_network(&g, &generator_dir(&dir), meta)?;
    let log_path = dir.join("pretrain_log.csv");
    write_adapt_log(&log_path, &log)?;
    let mut m = RunManifest::new("pretrain", cfg, key);
    m.inputs.insert("teacher_source".into(), images_fingerprint(&images));
    m.outputs.insert("source_teacher".into(), g.params().content_fingerprint());
    m.timings_secs.insert("pretrain".into(), secs(t0));
    m.metrics.push(lay.rel(&log_path));
    m.write(&lay.manifest("pretrain"))?;
    Ok((g, Some(m)))
}

/// Pretrain the source teacher (cached) and adapt a copy to the first
/// `k_shot` anchor targets for `seed`.
pub fn cmd_adapt(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.out_dir);
    let pool = load_pool(&lay)?;
    let (gs, pre_manifest) = ensure_source_teacher(cfg, &lay)?;
    let anchors = load_anchors(&lay, cfg.k_shot, cfg.seed, true)?;
    let targets: Vec<Image> = anchors.pairs.iter().map(|p| p.target.clone()).collect();
    debug_assert!(anchors.pairs.iter().all(|a| pool.pairs.iter().any(|p| p.name == a.name)));

    let ad = cfg.adapt_config(true);
    let disc = cfg.discriminators();
    let gs_fp = gs.params().content_fingerprint();
    let key = digest(&[&gs_fp, &anchors.content_fingerprint(), &digest_json(&(&ad, &disc))]);
    let dir = lay.target_teacher(cfg.k_shot, cfg.seed);
    let name = format!("adapt_k{}_s{}", cfg.k_shot, cfg.seed);
    if let (Some(_), Some(m)) = (cached_teacher(cfg, &dir, &key), RunManifest::cached(&lay.manifest(&name), &key)) {
        return Ok(m);
    }

    let t0 = Instant::now();
    let (gt, log) = adapt(&gs, &targets, &ad, &disc)?;
    fresh_dir(&dir)?;
    let meta = BTreeMap::from([("cache_key".to_string(), key.clone()), ("source_fingerprint".to_string(), gs_fp.clone())]);
    save_network(&gt, &generator_dir(&dir), meta)?;
    let log_path = dir.join("adapt_log.csv");
    write_adapt_log(&log_path, &log)?;

    let mut m = RunManifest::new("adapt", cfg, key);
    m.inputs.insert("source_teacher".into(), gs_fp);
    m.inputs.insert("anchors".into(), anchors.content_fingerprint());
    m.outputs.insert("target_teacher".into(), gt.params().content_fingerprint());
    if let Some(p) = &pre_manifest {
        m.timings_secs.extend(p.timings_secs.clone());
        m.metrics.extend(p.metrics.clone());
    }
    m.timings_secs.insert("adapt".into(), secs(t0));
    m.metrics.push(lay.rel(&log_path));
    m.write(&lay.manifest(&name))?;
    Ok(m)
}

/// Source and adapted teachers for `cfg`, checked to belong together.
pub fn load_teachers(cfg: &RunConfig) -> Result<(Generator<f32>, Generator<f32>)> {
    let lay = Layout::new(&cfg.out_dir);
    let (sd, td) = (lay.source_teacher(), lay.target_teacher(cfg.k_shot, cfg.seed));
    require_dir(&generator_dir(&sd), "source teacher checkpoint", "run adapt first")?;
    require_dir(&generator_dir(&td), "target teacher checkpoint", "run adapt first")?;
    let (gs, _) = load_teacher(cfg, &sd)?;
    let (gt, meta) = load_teacher(cfg, &td)?;
    if meta.get("source_fingerprint") != Some(&gs.params().content_fingerprint()) {
        return Err(Error::config(format!(
            "target teacher {} was not adapted from the source teacher {}",
            td.display(),
            sd.display()
        )));
    }
    Ok((gs, gt))
}

/// Export `augment_export` pairs from the shared-latent stream, using the
/// same stream seed as distillation.
pub fn cmd_augment(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.out_dir);
    let t0 = Instant::now();
    let (gs, gt) = load_teachers(cfg)?;
    let mut stream = AugmentedPairStream::new(&gs, &gt, rng::derive(cfg.seed, "augment-stream"))?;
    let dir = lay.augment(cfg.k_shot, cfg.seed);
    fresh_dir(&dir)?;
    let ds = export_augmented_set(&mut stream, cfg.augment_export, &dir)?;
    let key = digest(&[&gs.params().content_fingerprint(), &gt.params().content_fingerprint(), &cfg.augment_export.to_string()]);
    let mut m = RunManifest::new("augment", cfg, key);
    m.inputs.insert("source_teacher".into(), gs.params().content_fingerprint());
    m.inputs.insert("target_teacher".into(), gt.params().content_fingerprint());
    m.outputs.insert("augmented".into(), ds.content_fingerprint());
    m.timings_secs.insert("augment".into(), secs(t0));
    m.write(&lay.manifest(&format!("augment_k{}_s{}", cfg.k_shot, cfg.seed)))?;
    Ok(m)
}

fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("iter_")))
        .filter(|p| p.join("state.json").is_file())
        .collect();
    found.sort();
    found.pop()
}

/// Train a student in `cfg.mode`. BL needs only the anchor folder, Aug only
/// the teachers, Aug+Anchor both. A finished run with the same inputs is
/// skipped; an interrupted one resumes from its latest checkpoint.
pub fn cmd_distill(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.out_dir);
    let mode = cfg.mode;
    let dcfg = cfg.distill_config(mode, cfg.seed);
    let anchors = if mode.uses_anchors() {
        Some(AnchorSet::from_dataset(&load_anchors(&lay, cfg.data_scale, cfg.seed, false)?)?)
    } else {
        None
    };
    let teachers = if mode.uses_teachers() { Some(load_teachers(cfg)?) } else { None };

    let mut inputs = BTreeMap::new();
    if let Some(a) = &anchors {
        inputs.insert("anchors".to_string(), a.content_fingerprint());
    }
    if let Some((gs, gt)) = &teachers {
        inputs.insert("source_teacher".to_string(), gs.params().content_fingerprint());
        inputs.insert("target_teacher".to_string(), gt.params().content_fingerprint());
    }
    let key = digest(&[&digest_json(&dcfg), &digest_json(&inputs)]);
    let name = run_name(cfg);
    let run_dir = lay.run(cfg);
    let manifest_path = lay.manifest(&format!("distill_{name}"));
    if let Some(m) = RunManifest::cached(&manifest_path, &key) {
        if run_dir.join("state/student").is_dir() {
            return Ok(m);
        }
    }

    let t0 = Instant::now();
    let ckpt_dir = run_dir.join("checkpoints");
    let key_file = run_dir.join("cache_key");
    let resumable = fs::read_to_string(&key_file).is_ok_and(|k| k == key);
    if !resumable {
        fresh_dir(&run_dir)?;
        fs::write(&key_file, &key).map_err(|e| Error::io(&key_file, e))?;
    }

    let mut counters = UpdateCounters::default();
    let tref = teachers.as_ref().map(|(s, t)| (s, t));
    let mut trainer = Trainer::new(&dcfg, anchors.as_ref(), tref, &mut counters)?;
    let mut state = match latest_checkpoint(&ckpt_dir).filter(|_| resumable) {
        Some(dir) => TrainState::load(&dir, &dcfg, trainer.resolution())?,
        None => {
            let mut s = TrainState::new(&dcfg, trainer.resolution())?;
            s.counters = counters;
            s
        }
    };
    if let Err(e) = run(&mut state, &mut trainer, Some(&ckpt_dir)) {
        if let Error::Divergence(dump) = &e {
            let path = run_dir.join("divergence.json");
            let _ = fs::write(&path, serde_json::to_string_pretty(dump).expect("dump serializes"));
        }
        return Err(e);
    }
    state.save(&run_dir.join("state"))?;
    let log_path = run_dir.join("train_log.csv");
    write_train_log(&log_path, &state.history)?;

    let mut m = RunManifest::new("distill", cfg, key);
    m.inputs = inputs;
    m.outputs.insert("student".into(), state.student.params().content_fingerprint());
    m.outputs.insert("counters".into(), serde_json::to_string(&state.counters).expect("counters serialize"));
    m.timings_secs.insert("distill".into(), secs(t0));
    m.metrics.push(lay.rel(&log_path));
    m.write(&manifest_path)?;
    Ok(m)
}

/// Student checkpoint of the run selected by `cfg`.
pub fn load_student(cfg: &RunConfig) -> Result<Student<f32>> {
    let dir = Layout::new(&cfg.out_dir).run(cfg).join("state/student");
    require_dir(&dir, "student checkpoint", "run distill first")?;
    let mut s = build_student::<f32>(&cfg.student_spec(), cfg.resolution, 0)?;
    load_network(&mut s, &dir)?;
    Ok(s)
}

/// Verdict file written next to each evaluation: the trend report over
/// every evaluated run so far, or why it cannot be computed yet.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalVerdict {
    pub complete: bool,
    pub detail: String,
    pub report: Option<TrendReport>,
}

fn verdict_over(rows: &[EvalRow], min_gap: f64) -> EvalVerdict {
    match trend_report(rows, min_gap) {
        Ok(r) => EvalVerdict {
            complete: true,
            detail: if r.all_pass() { "all claims hold".into() } else { "some claims fail".into() },
            report: Some(r),
        },
        Err(e) => EvalVerdict { complete: false, detail: e.to_string(), report: None },
    }
}

/// Evaluate the run selected by `cfg` on the test set. Refuses test images
/// that appear in any anchor set the run or its teachers saw.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(RunManifest, EvalRow)> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.out_dir);
    let t0 = Instant::now();
    let student = load_student(cfg)?;
    require_dir(&lay.test(), "test set", "run datagen first")?;
    let (test, _) = read_dataset(&lay.test())?;

    let mut seen = HashSet::new();
    let mut sets = Vec::new();
    if cfg.mode.uses_anchors() {
        sets.push(lay.anchors(cfg.data_scale, cfg.seed));
    }
    if cfg.mode.uses_teachers() {
        sets.push(lay.anchors(cfg.k_shot, cfg.seed));
    }
    for dir in sets.iter().filter(|d| d.is_dir()) {
        seen.extend(read_dataset(dir)?.0.pairs.iter().map(|p| image_key(&p.source)));
    }
    let overlap = test.pairs.iter().filter(|p| seen.contains(&image_key(&p.source))).count();
    if overlap > 0 {
        return Err(Error::config(format!("test set contains {overlap} images present in the anchor set")));
    }

    let extractor = build_feature_extractor::<f32>(&cfg.eval_extractor_spec())?;
    let metrics = evaluate_student(&student, &test, &extractor)?;
    let name = run_name(cfg);
    let row = EvalRow::new(cfg.mode, cfg.data_scale, cfg.seed, &metrics, name.clone());
    let run_dir = lay.run(cfg);
    let csv_path = run_dir.join("eval.csv");
    write_eval_csv(&csv_path, std::slice::from_ref(&row))?;

    let rows_n = cfg.contact_sheet_rows.min(test.len());
    if rows_n > 0 {
        let src: Vec<&Image> = test.pairs[..rows_n].iter().map(|p| &p.source).collect();
        let out = unbatch(&student.translate(&crate::datagen::batch_tensor::<f32>(&src)));
        let sheet: Vec<(Image, Image, Image)> =
            test.pairs[..rows_n].iter().zip(out).map(|(p, o)| (p.source.clone(), o, p.target.clone())).collect();
        write_contact_sheet(&run_dir.join("contact_sheet.png"), &sheet)?;
    }

    let mut all = Vec::new();
    if let Ok(entries) = fs::read_dir(lay.runs()) {
        let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        dirs.sort();
        for d in dirs {
            if d.join("eval.csv").is_file() {
                all.extend(read_eval_csv(&d.join("eval.csv"))?);
            }
        }
    }
    let verdict = verdict_over(&all, cfg.trend_min_gap);
    let vpath = run_dir.join("verdict.json");
    fs::write(&vpath, serde_json::to_string_pretty(&verdict).expect("verdict serializes"))
        .map_err(|e| Error::io(&vpath, e))?;

    let mut m = RunManifest::new("eval", cfg, digest(&[&student.params().content_fingerprint(), &test.content_fingerprint()]));
    m.inputs.insert("student".into(), student.params().content_fingerprint());
    m.inputs.insert("test".into(), test.content_fingerprint());
    m.timings_secs.insert("eval".into(), secs(t0));
    m.metrics.push(lay.rel(&csv_path));
    m.write(&lay.manifest(&format!("eval_{name}")))?;
    Ok((m, row))
}

/// Every configured mode at every data scale for every seed, then the
/// trend verdicts. Finished cells are skipped.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<(RunManifest, TrendReport)> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.out_dir);
    let t0 = Instant::now();
    ensure_data(cfg)?;
    let mut rows = Vec::new();
    let mut m = RunManifest::new("ablate", cfg, super::manifest::config_fingerprint(cfg));
    for &seed in &cfg.ablation_seeds {
        let mut c = RunConfig { seed, ..cfg.clone() };
        if cfg.ablation_modes.iter().any(|m| m.uses_teachers()) {
            let am = cmd_adapt(&c)?;
            for p in am.metrics {
                if !m.metrics.contains(&p) {
                    m.metrics.push(p);
                }
            }
        }
        let mut shared: BTreeMap<DistillMode, EvalRow> = BTreeMap::new();
        for &n in &cfg.ablation_scales {
            c.data_scale = n;
            load_anchors(&lay, n, seed, true)?;
            for &mode in &cfg.ablation_modes {
                c.mode = mode;
                let row = match shared.get(&mode) {
                    Some(r) => EvalRow { data_scale: n, ..r.clone() },
                    None => {
                        let dm = cmd_distill(&c)?;
                        m.metrics.extend(dm.metrics);
                        let (em, row) = cmd_eval(&c)?;
                        m.metrics.extend(em.metrics);
                        if !mode.uses_anchors() {
                            shared.insert(mode, row.clone());
                        }
                        row
                    }
                };
                rows.push(row);
            }
        }
    }
    rows.sort_by(|a, b| (a.mode, a.data_scale, a.seed).cmp(&(b.mode, b.data_scale, b.seed)));
    let dir = lay.ablation();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let summary = dir.join("summary.csv");
    write_eval_csv(&summary, &rows)?;
    let report = trend_report(&rows, cfg.trend_min_gap)?;
    let trend = dir.join("trend.json");
    write_trend_report(&trend, &report)?;
    m.metrics.push(lay.rel(&summary));
    m.timings_secs.insert("ablate".into(), secs(t0));
    m.outputs.insert("all_pass".into(), report.all_pass().to_string());
    m.write(&lay.manifest("ablate"))?;
    Ok((m, report))
}

/// Re-execute the stage recorded in `manifest_path`, and every stage it
/// depends on, into `out_dir` with the recorded config.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<RunManifest> {
    let recorded = RunManifest::read(manifest_path)?;
    let cfg = RunConfig { out_dir: out_dir.to_path_buf(), ..recorded.config };
    let teachers = cfg.mode.uses_teachers();
    match recorded.stage.as_str() {
        "datagen" => cmd_datagen(&cfg),
        "pretrain" | "adapt" => {
            cmd_datagen(&cfg)?;
            cmd_adapt(&cfg)
        }
        "augment" => {
            cmd_datagen(&cfg)?;
            cmd_adapt(&cfg)?;
            cmd_augment(&cfg)
        }
        "distill" | "eval" => {
            cmd_datagen(&cfg)?;
            if teachers {
                cmd_adapt(&cfg)?;
            }
            let dm = cmd_distill(&cfg)?;
            if recorded.stage == "distill" {
                Ok(dm)
            } else {
                Ok(cmd_eval(&cfg)?.0)
            }
        }
        "ablate" => Ok(cmd_ablate(&cfg)?.0),
        other => Err(Error::config(format!("unknown stage {other} in {}", manifest_path.display()))),
    }
}
