//! Image-quality metrics and the ablation trend report.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::datagen::{unbatch, write_png, Image, PairedDataset};
use crate::distill::DistillMode;
use crate::error::{Error, Result};
use crate::nets::{ExtractorKind, FeatureExtractor, FeatureExtractorSpec, Student};
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(x: &Image, y: &Image) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::contract(format!("image shapes differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

/// Mean SSIM over all 8×8 windows (stride 1) of every channel, unit
/// dynamic range, population variances.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    same_shape(x, y)?;
    let (c, h, w) = x.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let a = x.at(ch, y0 + dy, x0 + dx) as f64;
                        let b = y.at(ch, y0 + dy, x0 + dx) as f64;
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                let (mx, my) = (sx / n, sy / n);
                let vx = sxx / n - mx * mx;
                let vy = syy / n - my * my;
                let cov = sxy / n - mx * my;
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Extractor used for evaluation. Its seed differs from the default
/// training extractor, so the metric is not the quantity being optimized.
pub fn default_eval_extractor_spec() -> FeatureExtractorSpec {
    FeatureExtractorSpec { kind: ExtractorKind::FixedRandom { seed: 4321 }, ..FeatureExtractorSpec::default() }
}

const NORM_EPS: f64 = 1e-10;

/// Per-tap distance for one image: channel vectors unit-normalized at each
/// location, squared difference summed over channels, averaged over space.
fn tap_distance(a: &[f64], b: &[f64], c: usize, hw: usize) -> f64 {
    let mut total = 0.0;
    for p in 0..hw {
        let na = (0..c).map(|k| a[k * hw + p].powi(2)).sum::<f64>().sqrt() + NORM_EPS;
        let nb = (0..c).map(|k| b[k * hw + p].powi(2)).sum::<f64>().sqrt() + NORM_EPS;
        total += (0..c).map(|k| (a[k * hw + p] / na - b[k * hw + p] / nb).powi(2)).sum::<f64>();
    }
    total / hw as f64
}

/// Per-image perceptual distances between two `[N, C, H, W]` batches.
pub fn perceptual_distance_batch<T: Real>(extractor: &FeatureExtractor<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<Vec<f64>> {
    if x.shape() != y.shape() {
        return Err(Error::contract(format!("batch shapes differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    let n = x.shape()[0];
    let fx = extractor.features_of(x);
    let fy = extractor.features_of(y);
    let mut out = vec![0.0; n];
    for (a, b) in fx.iter().zip(&fy) {
        let (_, c, h, w) = a.dims4();
        let per = c * h * w;
        let (ad, bd) = (a.data(), b.data());
        for (i, o) in out.iter_mut().enumerate() {
            let s = |d: &[T]| d[i * per..(i + 1) * per].iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
            *o += tap_distance(&s(ad), &s(bd), c, h * w);
        }
    }
    Ok(out)
}

pub fn perceptual_distance<T: Real>(extractor: &FeatureExtractor<T>, x: &Image, y: &Image) -> Result<f64> {
    same_shape(x, y)?;
    let xb = Tensor::stack(&[x.to_tensor()]);
    let yb = Tensor::stack(&[y.to_tensor()]);
    Ok(perceptual_distance_batch(extractor, &xb, &yb)?[0])
}

/// Gaussian fit of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sample_count: usize,
}

impl FeatureStats {
    /// Mean and unbiased covariance of the rows of `features`.
    pub fn from_rows(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::config("feature statistics need at least two samples"));
        }
        let d = features[0].len();
        if features.iter().any(|r| r.len() != d) {
            return Err(Error::contract("feature rows differ in length"));
        }
        let m = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mean = DVector::from_fn(d, |j, _| m.column(j).mean());
        let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
        let mut covariance = centered.transpose() * &centered / (n as f64 - 1.0);
        covariance = (&covariance + covariance.transpose()) * 0.5;
        Ok(Self { mean, covariance, sample_count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`. The trace of the
/// product root is computed as the sum of root eigenvalues of
/// `S_a^(1/2) S_b S_a^(1/2)`, negative eigenvalues clipped at zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!("feature dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let ra = psd_sqrt(&a.covariance);
    let inner = &ra * &b.covariance * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((diff + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_root).max(0.0))
}

/// Global-average-pooled activations of the extractor's last tap, one row
/// per image of the batch.
pub fn pooled_features<T: Real>(extractor: &FeatureExtractor<T>, x: &Tensor<T>) -> Vec<Vec<f64>> {
    let feats = extractor.features_of(x);
    let last = feats.last().expect("extractor has taps");
    let (n, c, h, w) = last.dims4();
    let d = last.data();
    (0..n)
        .map(|i| {
            (0..c)
                .map(|k| {
                    let off = (i * c + k) * h * w;
                    d[off..off + h * w].iter().map(|v| v.as_f64()).sum::<f64>() / (h * w) as f64
                })
                .collect()
        })
        .collect()
}

/// Minimum images for a Fréchet report with `dim`-dimensional features.
pub fn min_frechet_samples(dim: usize) -> usize {
    (dim + 1).max(32)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Metrics of one translator on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub images: usize,
    pub ssim_mean: f64,
    pub ssim_median: f64,
    pub perceptual_mean: f64,
    pub perceptual_median: f64,
    pub frechet: f64,
    pub feature_dim: usize,
}

const EVAL_BATCH: usize = 32;

/// Evaluate any batch translator `[N,C,H,W] -> [N,C,H,W]` on `test_set`.
pub fn evaluate_translator(
    translate: impl Fn(&Tensor<f32>) -> Tensor<f32>,
    test_set: &PairedDataset,
    extractor: &FeatureExtractor<f32>,
) -> Result<EvalMetrics> {
    if test_set.is_empty() {
        return Err(Error::config("evaluation needs a nonempty test set"));
    }
    let (mut ssims, mut percs) = (Vec::new(), Vec::new());
    let (mut out_feats, mut tgt_feats) = (Vec::new(), Vec::new());
    for chunk in test_set.pairs.chunks(EVAL_BATCH) {
        let src: Vec<&Image> = chunk.iter().map(|p| &p.source).collect();
        let tgt: Vec<&Image> = chunk.iter().map(|p| &p.target).collect();
        let x = crate::datagen::batch_tensor::<f32>(&src);
        let y = crate::datagen::batch_tensor::<f32>(&tgt);
        let out = translate(&x);
        if out.shape() != y.shape() {
            return Err(Error::contract("translator changed the image shape"));
        }
        for (o, t) in unbatch(&out).iter().zip(&tgt) {
            ssims.push(ssim(o, t)?);
        }
        percs.extend(perceptual_distance_batch(extractor, &out, &y)?);
        out_feats.extend(pooled_features(extractor, &out));
        tgt_feats.extend(pooled_features(extractor, &y));
    }
    let dim = out_feats[0].len();
    if out_feats.len() < min_frechet_samples(dim) {
        return Err(Error::config(format!(
            "Fréchet distance on {dim}-dim features needs at least {} test images, got {}",
            min_frechet_samples(dim),
            out_feats.len()
        )));
    }
    let frechet = frechet_distance(&FeatureStats::from_rows(&out_feats)?, &FeatureStats::from_rows(&tgt_feats)?)?;
    let n = ssims.len() as f64;
    Ok(EvalMetrics {
        images: ssims.len(),
        ssim_mean: ssims.iter().sum::<f64>() / n,
        ssim_median: median(&ssims),
        perceptual_mean: percs.iter().sum::<f64>() / n,
        perceptual_median: median(&percs),
        frechet,
        feature_dim: dim,
    })
}

pub fn evaluate_student(
    student: &Student<f32>,
    test_set: &PairedDataset,
    extractor: &FeatureExtractor<f32>,
) -> Result<EvalMetrics> {
    evaluate_translator(|x| student.translate(x), test_set, extractor)
}

/// One cell of an evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub mode: DistillMode,
    /// Number of training pairs available to the run.
    pub data_scale: usize,
    pub seed: u64,
    pub ssim: f64,
    pub perceptual: f64,
    pub frechet: f64,
    pub images: usize,
    /// Run directory or manifest this row came from.
    pub source: String,
}

impl EvalRow {
    pub fn new(mode: DistillMode, data_scale: usize, seed: u64, m: &EvalMetrics, source: impl Into<String>) -> Self {
        Self {
            mode,
            data_scale,
            seed,
            ssim: m.ssim_mean,
            perceptual: m.perceptual_mean,
            frechet: m.frechet,
            images: m.images,
            source: source.into(),
        }
    }
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::adapt::csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| crate::adapt::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::ingestion(format!("cannot read {}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<EvalRow>, _>>()
        .map_err(|e| Error::ingestion(format!("malformed {}: {e}", path.display())))
}

/// Seed medians of one (mode, scale) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mode: DistillMode,
    pub data_scale: usize,
    pub seeds: usize,
    pub ssim: f64,
    pub perceptual: f64,
    pub frechet: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub cells: Vec<CellSummary>,
    pub verdicts: Vec<Verdict>,
    /// Minimum SSIM gap required by the ordering claim.
    pub min_gap: f64,
}

impl TrendReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&self, claim: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.claim == claim)
    }
}

pub const MIN_SEEDS: usize = 3;

/// `a` beats `b` by at least `gap` (strictly, so ties fail).
fn beats(a: f64, b: f64, gap: f64) -> bool {
    a > b && a - b >= gap
}

/// Verdicts on seed medians: mode ordering at the smallest data scale
/// (SSIM up with each gap at least `min_gap`, perceptual distance strictly
/// down) and,
/// when several scales are present, that the gain of Aug+Anchor over BL at
/// the smallest scale is at least the gain at the largest scale.
pub fn trend_report(rows: &[EvalRow], min_gap: f64) -> Result<TrendReport> {
    let mut groups: BTreeMap<(usize, DistillMode), Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.data_scale, r.mode)).or_default().push(r);
    }
    let scales: Vec<usize> = {
        let mut s: Vec<usize> = rows.iter().map(|r| r.data_scale).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    if scales.is_empty() {
        return Err(Error::config("trend report needs evaluation rows"));
    }
    let mut cells = Vec::new();
    let mut summary: BTreeMap<(usize, DistillMode), CellSummary> = BTreeMap::new();
    for &scale in &scales {
        for mode in DistillMode::ALL {
            let g = groups.get(&(scale, mode)).map(Vec::as_slice).unwrap_or(&[]);
            if g.len() < MIN_SEEDS {
                return Err(Error::config(format!(
                    "cell ({mode}, {scale} pairs) has {} seeds, {MIN_SEEDS} required",
                    g.len()
                )));
            }
            let col = |f: fn(&EvalRow) -> f64| median(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let c = CellSummary {
                mode,
                data_scale: scale,
                seeds: g.len(),
                ssim: col(|r| r.ssim),
                perceptual: col(|r| r.perceptual),
                frechet: col(|r| r.frechet),
            };
            summary.insert((scale, mode), c.clone());
            cells.push(c);
        }
    }
    use DistillMode::*;
    let small = scales[0];
    let get = |s: usize, m: DistillMode| &summary[&(s, m)];
    let (bl, aug, aa) = (get(small, Baseline), get(small, Augmented), get(small, AugAnchor));
    let mut verdicts = vec![
        Verdict {
            claim: "ssim_order".into(),
            pass: beats(aa.ssim, aug.ssim, min_gap) && beats(aug.ssim, bl.ssim, min_gap),
            detail: format!("{small} pairs: Aug+Anchor {:.4} > Aug {:.4} > BL {:.4}", aa.ssim, aug.ssim, bl.ssim),
        },
        Verdict {
            claim: "perceptual_order".into(),
            pass: beats(aug.perceptual, aa.perceptual, 0.0) && beats(bl.perceptual, aug.perceptual, 0.0),
            detail: format!(
                "{small} pairs: Aug+Anchor {:.4} < Aug {:.4} < BL {:.4}",
                aa.perceptual, aug.perceptual, bl.perceptual
            ),
        },
    ];
    if scales.len() > 1 {
        let large = *scales.last().expect("nonempty");
        let ssim_gain = |s| get(s, AugAnchor).ssim - get(s, Baseline).ssim;
        let perc_gain = |s| get(s, Baseline).perceptual - get(s, AugAnchor).perceptual;
        verdicts.push(Verdict {
            claim: "ssim_gain_vs_scale".into(),
            pass: ssim_gain(small) >= ssim_gain(large),
            detail: format!("gain {:.4} at {small} pairs vs {:.4} at {large}", ssim_gain(small), ssim_gain(large)),
        });
        verdicts.push(Verdict {
            claim: "perceptual_gain_vs_scale".into(),
            pass: perc_gain(small) >= perc_gain(large),
            detail: format!("gain {:.4} at {small} pairs vs {:.4} at {large}", perc_gain(small), perc_gain(large)),
        });
    }
    Ok(TrendReport { cells, verdicts, min_gap })
}

pub fn write_trend_report(path: &Path, report: &TrendReport) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(report).expect("report serializes")).map_err(|e| Error::io(path, e))
}

/// Grid with one row per example: input | output | ground truth.
pub fn contact_sheet(rows: &[(Image, Image, Image)]) -> Result<Image> {
    let Some(first) = rows.first() else {
        return Err(Error::config("contact sheet needs at least one row"));
    };
    let (c, h, w) = first.0.shape();
    let pad = 1;
    let (sheet_h, sheet_w) = (rows.len() * (h + pad) + pad, 3 * (w + pad) + pad);
    let mut data = vec![1.0f32; c * sheet_h * sheet_w];
    for (r, (a, b, t)) in rows.iter().enumerate() {
        for (col, im) in [a, b, t].into_iter().enumerate() {
            if im.shape() != (c, h, w) {
                return Err(Error::contract("contact sheet images differ in shape"));
            }
            let (oy, ox) = (pad + r * (h + pad), pad + col * (w + pad));
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data[(ch * sheet_h + oy + y) * sheet_w + ox + x] = im.at(ch, y, x).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(Image::new(c, sheet_h, sheet_w, data))
}

pub fn write_contact_sheet(path: &Path, rows: &[(Image, Image, Image)]) -> Result<()> {
    write_png(path, &contact_sheet(rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_paired_dataset, generate_source_image, OracleTransform, SyntheticSpec};
    use crate::nets::build_feature_extractor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn img(seed: u64) -> Image {
        generate_source_image(&SyntheticSpec::default(), seed).unwrap()
    }

    #[test]
    fn ssim_reference_values() {
        let x = img(1);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let zeros = Image::filled(3, 16, 16, 0.0);
        let ones = Image::filled(3, 16, 16, 1.0);
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&zeros, &ones).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(ssim(&zeros, &Image::filled(3, 8, 8, 0.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn perceptual_distance_pseudometric_and_brute_force() {
        let ex = build_feature_extractor::<f64>(&FeatureExtractorSpec {
            layers: vec![(2, 3, 1), (2, 3, 2)],
            layer_taps: vec![1, 2],
            ..Default::default()
        })
        .unwrap();
        let (a, b) = (img(2), img(3));
        assert_eq!(perceptual_distance(&ex, &a, &a).unwrap(), 0.0);
        let d1 = perceptual_distance(&ex, &a, &b).unwrap();
        let d2 = perceptual_distance(&ex, &b, &a).unwrap();
        assert!(d1 > 0.0);
        assert!((d1 - d2).abs() < 1e-12);

        // independent recomputation straight from the tap activations
        let fa = ex.features_of(&Tensor::stack(&[a.to_tensor()]));
        let fb = ex.features_of(&Tensor::stack(&[b.to_tensor()]));
        let mut brute = 0.0;
        for (ta, tb) in fa.iter().zip(&fb) {
            let (_, c, h, w) = ta.dims4();
            let mut s = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let at = |t: &Tensor<f64>, k: usize| t.data()[(k * h + y) * w + x];
                    let na: f64 = (0..c).map(|k| at(ta, k).powi(2)).sum::<f64>().sqrt() + NORM_EPS;
                    let nb: f64 = (0..c).map(|k| at(tb, k).powi(2)).sum::<f64>().sqrt() + NORM_EPS;
                    for k in 0..c {
                        s += (at(ta, k) / na - at(tb, k) / nb).powi(2);
                    }
                }
            }
            brute += s / (h * w) as f64;
        }
        assert!((d1 - brute).abs() < 1e-12);
    }

    fn stats(mean: &[f64], cov: DMatrix<f64>) -> FeatureStats {
        FeatureStats { mean: DVector::from_row_slice(mean), covariance: cov, sample_count: 100 }
    }

    #[test]
    fn frechet_reference_values() {
        let a = stats(&[0.0, 0.0], DMatrix::identity(2, 2));
        let b = stats(&[3.0, 4.0], DMatrix::identity(2, 2));
        assert!(frechet_distance(&a, &a).unwrap() < 1e-6);
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 0.25);
        let c = stats(&[0.0], DMatrix::identity(1, 1));
        assert!(matches!(frechet_distance(&a, &c), Err(Error::Contract(_))));
        // 1-D: (s_a - s_b)^2 for variances s^2
        let v1 = stats(&[0.0], DMatrix::from_element(1, 1, 4.0));
        let v2 = stats(&[1.0], DMatrix::from_element(1, 1, 9.0));
        assert!((frechet_distance(&v1, &v2).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn frechet_nonnegative_and_matches_direct_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let d = 3;
            let rand_pd = |rng: &mut rand_chacha::ChaCha8Rng| {
                let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                &m * m.transpose() + DMatrix::identity(d, d) * 0.1
            };
            let a = stats(&[rng.random_range(-1.0..1.0), 0.0, 1.0], rand_pd(&mut rng));
            let b = stats(&[0.0, rng.random_range(-1.0..1.0), 0.5], rand_pd(&mut rng));
            let f = frechet_distance(&a, &b).unwrap();
            assert!(f >= 0.0);
            // direct: tr(sqrt(Sa Sb)) via eigenvalues of the (similar to PSD) product
            let prod = &a.covariance * &b.covariance;
            let eig = prod.complex_eigenvalues();
            let tr: f64 = eig.iter().map(|z| z.sqrt().re).sum();
            let direct = (&a.mean - &b.mean).norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * tr;
            assert!((f - direct).abs() < 1e-8 * (1.0 + direct.abs()), "{f} vs {direct}");
        }
    }

    #[test]
    fn unbiased_covariance() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![5.0, 8.0]];
        let s = FeatureStats::from_rows(&rows).unwrap();
        assert_eq!(s.mean.as_slice(), &[3.0, 4.0]);
        assert!((s.covariance[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((s.covariance[(1, 1)] - 12.0).abs() < 1e-12);
        assert!((s.covariance[(0, 1)] - 6.0).abs() < 1e-12);
        assert!(FeatureStats::from_rows(&rows[..1]).is_err());
    }

    #[test]
    fn oracle_translator_is_perfect_and_identity_is_not() {
        let t = OracleTransform::InvertColors;
        let ds = build_paired_dataset(&SyntheticSpec::default(), &t, 40, 9).unwrap();
        let ex = build_feature_extractor::<f32>(&default_eval_extractor_spec()).unwrap();
        let oracle = |x: &Tensor<f32>| {
            let ims: Vec<Image> = unbatch(x).iter().map(|im| crate::datagen::apply_oracle(&t, im).unwrap()).collect();
            crate::datagen::batch_tensor(&ims.iter().collect::<Vec<_>>())
        };
        let m = evaluate_translator(oracle, &ds, &ex).unwrap();
        assert_eq!(m.ssim_median, 1.0);
        assert_eq!(m.perceptual_mean, 0.0);
        assert!(m.frechet < 1e-6);
        let id = evaluate_translator(|x: &Tensor<f32>| x.clone(), &ds, &ex).unwrap();
        assert!(id.ssim_mean < m.ssim_mean - 0.5);
        let small = build_paired_dataset(&SyntheticSpec::default(), &t, 10, 9).unwrap();
        assert!(matches!(evaluate_translator(|x: &Tensor<f32>| x.clone(), &small, &ex), Err(Error::Config(_))));
    }

    fn row(mode: DistillMode, scale: usize, seed: u64, ssim: f64, perceptual: f64) -> EvalRow {
        EvalRow { mode, data_scale: scale, seed, ssim, perceptual, frechet: 0.0, images: 1, source: String::new() }
    }

    #[test]
    fn trend_verdicts() {
        use DistillMode::*;
        let mut rows = Vec::new();
        for seed in 0..3 {
            for (scale, lift) in [(20, 0.1), (360, 0.02)] {
                rows.push(row(Baseline, scale, seed, 0.5, 0.5));
                rows.push(row(Augmented, scale, seed, 0.5 + lift / 2.0, 0.5 - lift / 2.0));
                rows.push(row(AugAnchor, scale, seed, 0.5 + lift, 0.5 - lift));
            }
        }
        let rep = trend_report(&rows, 0.01).unwrap();
        assert!(rep.all_pass(), "{:?}", rep.verdicts);
        assert_eq!(rep.cells.len(), 6);

        let tied: Vec<EvalRow> = rows
            .iter()
            .map(|r| EvalRow { ssim: 0.5, perceptual: 0.5, ..r.clone() })
            .collect();
        let rep = trend_report(&tied, 0.0).unwrap();
        assert!(!rep.verdict("ssim_order").unwrap().pass);
        assert!(!rep.verdict("perceptual_order").unwrap().pass);

        // The SSIM gap is enforced; perceptual distance only needs strict order.
        let narrow: Vec<EvalRow> = rows
            .iter()
            .map(|r| {
                let k = match r.mode {
                    Baseline => 0.0,
                    Augmented => 1.0,
                    AugAnchor => 2.0,
                };
                EvalRow { ssim: 0.5 + 0.005 * k, perceptual: 0.5 - 0.001 * k, ..r.clone() }
            })
            .collect();
        let rep = trend_report(&narrow, 0.01).unwrap();
        assert!(!rep.verdict("ssim_order").unwrap().pass);
        assert!(rep.verdict("perceptual_order").unwrap().pass);

        assert!(matches!(trend_report(&rows[..rows.len() - 1], 0.01), Err(Error::Config(_))));
        assert!(matches!(trend_report(&[], 0.01), Err(Error::Config(_))));
    }

    #[test]
    fn eval_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row(DistillMode::AugAnchor, 20, 1, 0.123456789, 0.1), row(DistillMode::Baseline, 360, 2, 0.5, 0.25)];
        let p = dir.path().join("eval.csv");
        write_eval_csv(&p, &rows).unwrap();
        assert_eq!(read_eval_csv(&p).unwrap(), rows);
    }

    #[test]
    fn contact_sheet_layout() {
        let a = Image::filled(3, 8, 8, 0.0);
        let s = contact_sheet(&[(a.clone(), a.clone(), a.clone()), (a.clone(), a.clone(), a)]).unwrap();
        assert_eq!(s.shape(), (3, 2 * 9 + 1, 3 * 9 + 1));
        assert_eq!(s.at(0, 0, 0), 1.0);
        assert_eq!(s.at(0, 1, 1), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ssim_bounded_and_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
            let (a, b) = (img(s1), img(s2));
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }
}
