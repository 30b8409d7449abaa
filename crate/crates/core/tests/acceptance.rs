//! End-to-end acceptance checks. Runs as a plain binary so each criterion
//! prints one PASS/FAIL line; exits nonzero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,5,9` restricts the run to the listed criteria.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use prior_distill::adapt::{adapt, AdaptConfig};
use prior_distill::augment::AugmentedPairStream;
use prior_distill::autograd::{Tape, Var};
use prior_distill::datagen::{batch_tensor, build_paired_dataset, generate_source_image, OracleTransform, SyntheticSpec};
use prior_distill::distill::{
    combined_adv_loss, combined_per_loss, lsgan_d_loss, lsgan_g_loss, perceptual_loss, total_loss, train, AnchorSet,
    BatchSource, DistillConfig, DistillMode, LossWeights, RoutedTerm, SamplingSchedule, ScheduleMode,
};
use prior_distill::metrics::{frechet_distance, perceptual_distance, ssim, FeatureStats, TrendReport};
use prior_distill::nets::{
    build_feature_extractor, build_patch_discriminator, build_student, build_teacher_generator, clone_generator,
    probe_receptive_field, receptive_field, ConvLayer, DiscriminatorPairSpec, FeatureExtractor, FeatureExtractorSpec,
    LatentSpec, Network, PatchDiscriminator, PatchScale, Student, StudentTranslatorSpec, TeacherGeneratorSpec,
};
use prior_distill::pipeline::{cmd_ablate, replay, RunConfig};
use prior_distill::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// Small networks shared by the arithmetic checks: 16px images, a student
// and both discriminators under 1k parameters in total.

const RES: usize = 16;

fn micro_discriminators() -> DiscriminatorPairSpec {
    let mut d = DiscriminatorPairSpec::default();
    d.fine.conv_layers = vec![ConvLayer::new(4, 2)];
    d.coarse.conv_layers = vec![ConvLayer::new(4, 2), ConvLayer::new(4, 2), ConvLayer::new(2, 1)];
    d.fine.base_channels = 2;
    d.coarse.base_channels = 2;
    d
}

struct Micro<T> {
    student: Student<T>,
    fine: PatchDiscriminator<T>,
    coarse: PatchDiscriminator<T>,
    extractor: FeatureExtractor<T>,
}

fn micro() -> Micro<f64> {
    let disc = micro_discriminators();
    let student_spec = StudentTranslatorSpec { encoder_widths: vec![2, 4], decoder_widths: vec![2], ..Default::default() };
    let ex_spec = FeatureExtractorSpec { layers: vec![(4, 3, 1), (4, 3, 2)], layer_taps: vec![1, 2], ..Default::default() };
    Micro {
        student: build_student(&student_spec, RES, 11).unwrap(),
        fine: build_patch_discriminator(PatchScale::Fine, &disc, RES, 12).unwrap(),
        coarse: build_patch_discriminator(PatchScale::Coarse, &disc, RES, 13).unwrap(),
        extractor: build_feature_extractor(&ex_spec).unwrap(),
    }
}

/// Anchor and augmented batches of two pairs each: synthetic sources with
/// their inverted targets.
fn micro_batches() -> [(Tensor<f64>, Tensor<f64>); 2] {
    let spec = SyntheticSpec { resolution: RES, ..Default::default() };
    let ds = build_paired_dataset(&spec, &OracleTransform::InvertColors, 4, 21).unwrap();
    let b = |i: usize| {
        let src: Vec<_> = ds.pairs[i..i + 2].iter().map(|p| &p.source).collect();
        let tgt: Vec<_> = ds.pairs[i..i + 2].iter().map(|p| &p.target).collect();
        (batch_tensor::<f64>(&src), batch_tensor::<f64>(&tgt))
    };
    [b(0), b(2)]
}

/// Student objective on tape: adversarial terms routed anchor->fine and
/// augmented->coarse, perceptual terms on both, composed with `w`.
fn student_objective<'t>(
    tape: &'t Tape<f64>,
    m: &Micro<f64>,
    params: [&[Var<'t, f64>]; 3],
    batches: &[(Tensor<f64>, Tensor<f64>); 2],
    w: &LossWeights,
) -> Var<'t, f64> {
    let [sp, fp, cp] = params;
    let (xa, ya) = (tape.constant(batches[0].0.clone()), tape.constant(batches[0].1.clone()));
    let (xg, yg) = (tape.constant(batches[1].0.clone()), tape.constant(batches[1].1.clone()));
    let (oa, og) = (m.student.forward(sp, xa), m.student.forward(sp, xg));
    let adv_a = RoutedTerm::new(lsgan_g_loss(m.fine.forward(fp, oa), w), BatchSource::Anchor, PatchScale::Fine);
    let adv_g = RoutedTerm::new(lsgan_g_loss(m.coarse.forward(cp, og), w), BatchSource::Augmented, PatchScale::Coarse);
    let adv = combined_adv_loss(adv_a, adv_g, w).unwrap();
    let per_a = perceptual_loss(tape, &m.extractor, oa, ya).unwrap();
    let per_g = perceptual_loss(tape, &m.extractor, og, yg).unwrap();
    total_loss(adv, combined_per_loss(per_a, per_g, w), w)
}

fn mean_sq_to(t: &Tensor<f64>, label: f64) -> f64 {
    let mut s = 0.0;
    for &v in t.data() {
        s += (v - label) * (v - label);
    }
    s / t.len() as f64
}

fn brute_perceptual(ex: &FeatureExtractor<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let (fx, fy) = (ex.features_of(x), ex.features_of(y));
    let mut total = 0.0;
    for (a, b) in fx.iter().zip(&fy) {
        let mut s = 0.0;
        for (p, q) in a.data().iter().zip(b.data()) {
            s += (p - q).abs();
        }
        total += s / a.len() as f64;
    }
    total
}

fn criterion_1() -> Result<String, String> {
    let m = micro();
    let batches = micro_batches();
    let w = LossWeights::default();
    ensure(w.lambda1 == 1.0 && w.lambda2 == 1.0 && w.mu == 5.0, "default weights are not 1, 1, 5")?;

    let tape = Tape::new();
    let (sp, fp, cp) = (m.student.params().bind(&tape, false), m.fine.params().bind(&tape, false), m.coarse.params().bind(&tape, false));
    let composed = student_objective(&tape, &m, [&sp, &fp, &cp], &batches, &w).item();

    // Independent recomputation from raw score and feature maps.
    let oa = m.student.translate(&batches[0].0);
    let og = m.student.translate(&batches[1].0);
    let adv = mean_sq_to(&m.fine.score(&oa), 1.0) + w.lambda1 * mean_sq_to(&m.coarse.score(&og), 1.0);
    let per = brute_perceptual(&m.extractor, &oa, &batches[0].1) + w.lambda2 * brute_perceptual(&m.extractor, &og, &batches[1].1);
    let brute = adv + 5.0 * per;
    let err = (composed - brute).abs();
    ensure(err <= 1e-12, format!("student objective {composed} vs brute force {brute}, |diff| {err:e}"))?;

    // Discriminator objective on the anchor batch.
    let tape = Tape::new();
    let fp = m.fine.params().bind(&tape, false);
    let real = m.fine.forward(&fp, tape.constant(batches[0].1.clone()));
    let fake = m.fine.forward(&fp, tape.constant(oa.clone()));
    let d = lsgan_d_loss(real, fake, &w).item();
    let d_brute = mean_sq_to(&m.fine.score(&batches[0].1), 1.0) + mean_sq_to(&m.fine.score(&oa), 0.0);
    let d_err = (d - d_brute).abs();
    ensure(d_err <= 1e-12, format!("discriminator loss {d} vs {d_brute}"))?;

    // A term routed to the wrong discriminator is refused.
    let bad = RoutedTerm::new(1.0, BatchSource::Augmented, PatchScale::Fine);
    let good = RoutedTerm::new(1.0, BatchSource::Anchor, PatchScale::Fine);
    ensure(combined_adv_loss(good, bad, &w).is_err(), "misrouted augmented term accepted")?;
    Ok(format!("total {composed:.6} |diff| {err:.1e}; D loss |diff| {d_err:.1e}"))
}

fn criterion_2() -> Result<String, String> {
    let m = micro();
    let batches = micro_batches();
    let w = LossWeights::default();
    let base: Vec<Tensor<f64>> = [m.student.params(), m.fine.params(), m.coarse.params()]
        .iter()
        .flat_map(|p| p.iter().map(|q| q.value.clone()))
        .collect();
    let n_params: usize = base.iter().map(|t| t.len()).sum();
    ensure(n_params <= 1000, format!("micro network has {n_params} parameters"))?;
    let counts = [m.student.params().len(), m.fine.params().len()];

    let eval = |values: &[Tensor<f64>], want_grad: bool| -> (f64, Vec<Tensor<f64>>) {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = values.iter().map(|t| tape.param(t.clone())).collect();
        let (sp, rest) = vars.split_at(counts[0]);
        let (fp, cp) = rest.split_at(counts[1]);
        let loss = student_objective(&tape, &m, [sp, fp, cp], &batches, &w);
        let grads = if want_grad {
            let g = loss.backward();
            vars.iter().map(|v| g.get_or_zeros(v, &v.shape())).collect()
        } else {
            Vec::new()
        };
        (loss.item(), grads)
    };
    let (_, grad) = eval(&base, true);

    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let dir: Vec<Tensor<f64>> = base
            .iter()
            .map(|t| Tensor::new(t.shape().to_vec(), (0..t.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()))
            .collect();
        let norm = dir.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
        let shifted = |s: f64| -> Vec<Tensor<f64>> {
            base.iter().zip(&dir).map(|(b, d)| b.zip_map(d, |x, v| x + s * v / norm)).collect()
        };
        let fd = (eval(&shifted(h), false).0 - eval(&shifted(-h), false).0) / (2.0 * h);
        let analytic: f64 =
            grad.iter().zip(&dir).flat_map(|(g, d)| g.data().iter().zip(d.data())).map(|(g, d)| g * d / norm).sum();
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    ensure(worst < 1e-3, format!("worst relative error {worst:.2e} over 50 directions"))?;
    Ok(format!("{n_params} parameters, worst relative error {worst:.2e} over 50 directions"))
}

fn criterion_3() -> Result<String, String> {
    let det = SamplingSchedule::default();
    let anchors = (0..30_000u64).filter(|&i| det.at(i) == BatchSource::Anchor).count();
    ensure(anchors == 10_000, format!("deterministic cycle drew {anchors} anchors in 30000"))?;
    let mut fracs = Vec::new();
    for seed in 0..3 {
        let b = SamplingSchedule { mode: ScheduleMode::Bernoulli, seed, ..Default::default() };
        let n = (0..30_000u64).filter(|&i| b.at(i) == BatchSource::Anchor).count();
        let f = n as f64 / 30_000.0;
        ensure((f - 1.0 / 3.0).abs() <= 0.02, format!("Bernoulli seed {seed} anchor fraction {f:.4}"))?;
        fracs.push(format!("{f:.4}"));
    }
    Ok(format!("cycle 10000/30000 anchors; Bernoulli fractions {}", fracs.join(", ")))
}

fn criterion_4() -> Result<String, String> {
    let shipped = [("default", DiscriminatorPairSpec::default()), ("16px", micro_discriminators())];
    let mut details = Vec::new();
    for (name, pair) in shipped {
        let mut rfs = [0usize; 2];
        for (i, spec) in [&pair.fine, &pair.coarse].into_iter().enumerate() {
            let closed = receptive_field(&spec.conv_layers);
            let probed = probe_receptive_field(&spec.conv_layers);
            ensure(closed == probed, format!("{name} {:?}: closed form {closed} vs probe {probed}", spec.patch_scale))?;
            rfs[i] = closed;
        }
        let ratio = rfs[1] as f64 / rfs[0] as f64;
        ensure((3.5..=4.5).contains(&ratio), format!("{name} ratio {ratio}"))?;
        details.push(format!("{name} fine {} coarse {} ratio {ratio:.2}", rfs[0], rfs[1]));
    }
    Ok(details.join("; "))
}

fn criterion_5() -> Result<String, String> {
    let spec = TeacherGeneratorSpec { latent: LatentSpec { dim: 8 }, channel_widths: vec![8, 4], output_resolution: RES, channels: 3 };
    let gs = build_teacher_generator::<f32>(&spec, 5).map_err(|e| e.to_string())?;
    let clone = clone_generator(&gs);
    let mut stream = ok(AugmentedPairStream::new(&gs, &clone, 9))?.with_draw_records();
    let batch = ok(stream.sample_batch(16))?;
    ensure(batch.source.data() == batch.target.data(), "un-adapted clone produced different targets")?;
    ensure(stream.draws().iter().all(|d| d.source_input == d.target_input), "latents not shared")?;
    let distinct = stream.draws().iter().map(|d| d.latent_seed).collect::<std::collections::HashSet<_>>().len();
    ensure(distinct == 16, "latents repeated within the stream")?;

    let sspec = SyntheticSpec { resolution: RES, ..Default::default() };
    let targets: Vec<_> = (0..4)
        .map(|i| {
            let s = generate_source_image(&sspec, 100 + i).unwrap();
            prior_distill::datagen::apply_oracle(&OracleTransform::InvertColors, &s).unwrap()
        })
        .collect();
    let cfg = AdaptConfig { iterations: 3, batch: 2, ..Default::default() };
    let (gt, _) = ok(adapt(&gs, &targets, &cfg, &micro_discriminators()))?;
    let mut stream = ok(AugmentedPairStream::new(&gs, &gt, 9))?;
    let adapted = ok(stream.sample_batch(16))?;
    ensure(adapted.source.data() == batch.source.data(), "source side changed after adaptation")?;
    let diff = adapted.source.data().iter().zip(adapted.target.data()).filter(|(a, b)| a != b).count();
    ensure(diff > 0, "adapted teacher still reproduces the source exactly")?;
    Ok(format!("16 pairs identical before adaptation; {diff} of {} values differ after", adapted.source.len()))
}

fn criterion_6() -> Result<String, String> {
    let mut discriminators = DiscriminatorPairSpec::default();
    discriminators.fine.conv_layers = vec![ConvLayer::new(4, 2)];
    discriminators.coarse.conv_layers = vec![ConvLayer::new(4, 2), ConvLayer::new(4, 2), ConvLayer::new(2, 1)];
    discriminators.fine.base_channels = 4;
    discriminators.coarse.base_channels = 4;
    let cfg = DistillConfig {
        mode: DistillMode::AugAnchor,
        iterations: 300,
        batch: 2,
        student: StudentTranslatorSpec { encoder_widths: vec![4, 8], decoder_widths: vec![4], ..Default::default() },
        extractor: FeatureExtractorSpec { layers: vec![(4, 3, 1), (8, 3, 2)], layer_taps: vec![1, 2], ..Default::default() },
        discriminators,
        schedule: SamplingSchedule { mode: ScheduleMode::Bernoulli, seed: 4, ..Default::default() },
        seed: 4,
        ..Default::default()
    };
    let ds = build_paired_dataset(&SyntheticSpec { resolution: RES, ..Default::default() }, &OracleTransform::InvertColors, 6, 3)
        .map_err(|e| e.to_string())?;
    let anchors = ok(AnchorSet::from_dataset(&ds))?;
    let tspec = TeacherGeneratorSpec { latent: LatentSpec { dim: 8 }, channel_widths: vec![8, 4], output_resolution: RES, channels: 3 };
    let gs = ok(build_teacher_generator::<f32>(&tspec, 0))?;
    let gt = ok(build_teacher_generator::<f32>(&tspec, 1))?;
    let state = ok(train(&cfg, Some(&anchors), Some((&gs, &gt)), None))?;
    let c = &state.counters;
    ensure(c.anchor_steps + c.augmented_steps == 300, "step counts do not add up to 300")?;
    ensure(c.fine_updates == c.anchor_steps, format!("fine updates {} vs anchor steps {}", c.fine_updates, c.anchor_steps))?;
    ensure(c.coarse_updates == c.augmented_steps, format!("coarse updates {} vs augmented steps {}", c.coarse_updates, c.augmented_steps))?;
    ensure(c.student_updates == 300, "student not updated every step")?;
    let logged_ok = state.history.iter().all(|r| match r.source {
        BatchSource::Anchor => r.adv_crs == 0.0 && r.per_aug == 0.0,
        BatchSource::Augmented => r.adv_fine == 0.0 && r.per_anchor == 0.0,
    });
    ensure(logged_ok, "a step logged a loss term from the other data source")?;
    Ok(format!(
        "anchor steps {} = fine updates {}; augmented steps {} = coarse updates {}",
        c.anchor_steps, c.fine_updates, c.augmented_steps, c.coarse_updates
    ))
}

/// Settings for the ablation sweep behind criteria 7 and 8.
fn ablation_config(out: &Path) -> RunConfig {
    RunConfig {
        out_dir: out.to_path_buf(),
        pretrain_iterations: 10_000,
        adapt_iterations: 500,
        iterations: 1500,
        student_encoder_widths: vec![8, 16, 32],
        student_decoder_widths: vec![16, 8],
        ablation_scales: vec![360, 20],
        ablation_seeds: vec![0, 1, 2],
        ..Default::default()
    }
}

fn ablation() -> &'static Result<(TrendReport, String), String> {
    static REPORT: OnceLock<Result<(TrendReport, String), String>> = OnceLock::new();
    REPORT.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let t0 = Instant::now();
        let (_, report) = ok(cmd_ablate(&ablation_config(dir.path())))?;
        let summary = fs::read_to_string(dir.path().join("ablation/summary.csv")).unwrap_or_default();
        for c in &report.cells {
            eprintln!(
                "  cell {:>10} n={:<3} ssim {:.4} perceptual {:.4} frechet {:.4}",
                c.mode.to_string(),
                c.data_scale,
                c.ssim,
                c.perceptual,
                c.frechet
            );
        }
        eprintln!("{summary}");
        Ok((report, format!("sweep took {:.0}s", t0.elapsed().as_secs_f64())))
    })
}

fn claims(names: &[&str]) -> Result<String, String> {
    let (report, timing) = ablation().as_ref().map_err(|e| e.clone())?;
    let mut lines = Vec::new();
    let mut pass = true;
    for n in names {
        let v = report.verdict(n).ok_or(format!("missing verdict {n}"))?;
        pass &= v.pass;
        lines.push(format!("{n} {}: {}", if v.pass { "holds" } else { "fails" }, v.detail));
    }
    let text = format!("{}; {timing}", lines.join("; "));
    if pass {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_7() -> Result<String, String> {
    claims(&["ssim_order", "perceptual_order"])
}

fn criterion_8() -> Result<String, String> {
    claims(&["ssim_gain_vs_scale", "perceptual_gain_vs_scale"])
}

fn criterion_9() -> Result<String, String> {
    let spec = SyntheticSpec::default();
    let x = ok(generate_source_image(&spec, 1))?;
    let y = ok(generate_source_image(&spec, 2))?;
    let s = ok(ssim(&x, &x))?;
    ensure(s == 1.0, format!("ssim(x, x) = {s}"))?;
    let sym = (ok(ssim(&x, &y))? - ok(ssim(&y, &x))?).abs();
    ensure(sym <= 1e-12, "ssim not symmetric")?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rows: Vec<Vec<f64>> = (0..64).map(|_| (0..6).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let stats = ok(FeatureStats::from_rows(&rows))?;
    let same = ok(frechet_distance(&stats, &stats))?;
    ensure(same < 1e-6, format!("identical stats distance {same}"))?;

    let gauss = |mu: [f64; 2]| FeatureStats {
        mean: nalgebra::DVector::from_row_slice(&mu),
        covariance: nalgebra::DMatrix::identity(2, 2),
        sample_count: 100,
    };
    let d = ok(frechet_distance(&gauss([0.0, 0.0]), &gauss([3.0, 4.0])))?;
    ensure((d - 25.0).abs() <= 0.25, format!("N(0,I) vs N((3,4),I) distance {d}"))?;

    let ex = ok(build_feature_extractor::<f32>(&prior_distill::metrics::default_eval_extractor_spec()))?;
    let p = ok(perceptual_distance(&ex, &x, &x))?;
    ensure(p == 0.0, format!("perceptual_distance(x, x) = {p}"))?;
    Ok(format!("ssim(x,x) 1; identical-stats distance {same:.1e}; analytic case {d:.6}; perceptual(x,x) 0"))
}

fn tiny_pipeline(out: &Path) -> RunConfig {
    RunConfig {
        out_dir: out.to_path_buf(),
        resolution: 16,
        train_pool: 24,
        test_size: 40,
        k_shot: 4,
        data_scale: 4,
        teacher_source_images: 16,
        latent_dim: 8,
        teacher_widths: vec![8, 4],
        pretrain_iterations: 4,
        pretrain_batch: 2,
        adapt_iterations: 3,
        adapt_batch: 2,
        fine_layers: vec![[4, 2]],
        coarse_layers: vec![[4, 2], [4, 2], [2, 1]],
        disc_base_channels: 4,
        student_encoder_widths: vec![4, 8],
        student_decoder_widths: vec![4],
        iterations: 9,
        batch: 2,
        ablation_scales: vec![24, 4],
        ..Default::default()
    }
}

fn criterion_10() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (manifest, _) = ok(cmd_ablate(&tiny_pipeline(&a)))?;
    let recorded = a.join("manifests/ablate.json");
    let replayed = ok(replay(&recorded, &b))?;
    ensure(replayed.metrics == manifest.metrics, "replay listed different metric files")?;
    let files: Vec<PathBuf> = manifest.metrics.clone();
    ensure(files.iter().any(|f| f.ends_with("summary.csv")), "summary table not referenced")?;
    for f in &files {
        let (x, y) = (fs::read(a.join(f)), fs::read(b.join(f)));
        let (x, y) = (x.map_err(|e| format!("{}: {e}", f.display()))?, y.map_err(|e| format!("{}: {e}", f.display()))?);
        ensure(x == y, format!("{} differs after replay", f.display()))?;
    }
    Ok(format!("{} metric CSVs bit-identical after replay from the manifest", files.len()))
}

fn main() {
    let all: [(u32, &str, Check); 10] = [
        (1, "loss arithmetic", criterion_1),
        (2, "gradient check", criterion_2),
        (3, "schedule ratio", criterion_3),
        (4, "receptive-field ratio", criterion_4),
        (5, "shared-latent augmentation", criterion_5),
        (6, "discriminator routing", criterion_6),
        (7, "ablation trend", criterion_7),
        (8, "data-scale trend", criterion_8),
        (9, "metric sanity", criterion_9),
        (10, "reproducibility", criterion_10),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, check) in all {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
