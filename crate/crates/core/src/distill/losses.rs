use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{FeatureExtractor, PatchScale};
use crate::tensor::{Real, Tensor};

/// Which least-squares labels the adversarial losses use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelConvention {
    /// Real scored toward 1, fake toward 0, generator target 1.
    #[default]
    Standard,
    /// Labels swapped: real toward 0, fake toward 1, generator target 0.
    Swapped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the adversarial term on augmented data.
    pub lambda1: f64,
    /// Weight of the perceptual term on augmented data.
    pub lambda2: f64,
    /// Weight of the perceptual loss against the adversarial loss.
    pub mu: f64,
    pub labels: LabelConvention,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, mu: 5.0, labels: LabelConvention::Standard }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn real_label(&self) -> f64 {
        match self.labels {
            LabelConvention::Standard => 1.0,
            LabelConvention::Swapped => 0.0,
        }
    }

    pub fn fake_label(&self) -> f64 {
        1.0 - self.real_label()
    }
}

/// Where a training batch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSource {
    Anchor,
    Augmented,
}

impl BatchSource {
    /// The discriminator that is allowed to score this kind of data.
    pub fn discriminator(self) -> PatchScale {
        match self {
            BatchSource::Anchor => PatchScale::Fine,
            BatchSource::Augmented => PatchScale::Coarse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BatchSource::Anchor => "anchor",
            BatchSource::Augmented => "augmented",
        }
    }
}

/// An adversarial loss value tagged with the data it was computed on and the
/// discriminator that scored it.
#[derive(Clone, Copy, Debug)]
pub struct RoutedTerm<V> {
    pub value: V,
    pub data: BatchSource,
    pub scored_by: PatchScale,
}

impl<V> RoutedTerm<V> {
    pub fn new(value: V, data: BatchSource, scored_by: PatchScale) -> Self {
        Self { value, data, scored_by }
    }
}

fn check_route<V>(term: &RoutedTerm<V>, expected: BatchSource) -> Result<()> {
    if term.data != expected {
        return Err(Error::contract(format!(
            "{} term passed in the {} slot",
            term.data.name(),
            expected.name()
        )));
    }
    if term.scored_by != expected.discriminator() {
        return Err(Error::contract(format!(
            "{} data scored by the {} discriminator",
            term.data.name(),
            term.scored_by.name()
        )));
    }
    Ok(())
}

fn mean_sq_dev<'t, T: Real>(scores: Var<'t, T>, label: f64) -> Var<'t, T> {
    scores.add_scalar(-label).square().mean_all()
}

/// Discriminator least-squares loss: mean squared distance of real scores to
/// the real label plus that of fake scores to the fake label.
pub fn lsgan_d_loss<'t, T: Real>(real: Var<'t, T>, fake: Var<'t, T>, w: &LossWeights) -> Var<'t, T> {
    mean_sq_dev(real, w.real_label()) + mean_sq_dev(fake, w.fake_label())
}

/// Generator least-squares loss: fake scores pulled toward the real label.
pub fn lsgan_g_loss<'t, T: Real>(fake: Var<'t, T>, w: &LossWeights) -> Var<'t, T> {
    mean_sq_dev(fake, w.real_label())
}

/// Sum over feature taps of the mean absolute difference, i.e. the L1 norm
/// divided by `C·H·W` of each tap, averaged over the batch.
pub fn perceptual_from_features<'t, T: Real>(fx: &[Var<'t, T>], fy: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    if fx.len() != fy.len() || fx.is_empty() {
        return Err(Error::contract("perceptual loss needs matching, nonempty tap lists"));
    }
    let mut total: Option<Var<'t, T>> = None;
    for (a, b) in fx.iter().zip(fy) {
        if a.shape() != b.shape() {
            return Err(Error::contract(format!("tap shape {:?} vs {:?}", a.shape(), b.shape())));
        }
        let term = (*a - *b).abs().mean_all();
        total = Some(match total {
            Some(t) => t + term,
            None => term,
        });
    }
    Ok(total.expect("nonempty taps"))
}

pub fn perceptual_loss<'t, T: Real>(
    tape: &'t Tape<T>,
    extractor: &FeatureExtractor<T>,
    x: Var<'t, T>,
    y: Var<'t, T>,
) -> Result<Var<'t, T>> {
    if x.shape() != y.shape() {
        return Err(Error::contract(format!("perceptual loss on shapes {:?} and {:?}", x.shape(), y.shape())));
    }
    perceptual_from_features(&extractor.features(tape, x), &extractor.features(tape, y))
}

/// Gradient-free perceptual loss between two image batches.
pub fn perceptual_value<T: Real>(extractor: &FeatureExtractor<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let tape = Tape::new();
    let (vx, vy) = (tape.constant(x.clone()), tape.constant(y.clone()));
    Ok(perceptual_loss(&tape, extractor, vx, vy)?.item())
}

/// `anchor + lambda1 * augmented`, after checking that anchor data was
/// scored by the fine discriminator and augmented data by the coarse one.
pub fn combined_adv_loss<V>(anchor: RoutedTerm<V>, augmented: RoutedTerm<V>, w: &LossWeights) -> Result<V>
where
    V: Add<Output = V> + Mul<f64, Output = V>,
{
    check_route(&anchor, BatchSource::Anchor)?;
    check_route(&augmented, BatchSource::Augmented)?;
    Ok(anchor.value + augmented.value * w.lambda1)
}

/// `anchor + lambda2 * augmented`.
pub fn combined_per_loss<V>(anchor: V, augmented: V, w: &LossWeights) -> V
where
    V: Add<Output = V> + Mul<f64, Output = V>,
{
    anchor + augmented * w.lambda2
}

/// `adv + mu * per`.
pub fn total_loss<V>(adv: V, per: V, w: &LossWeights) -> V
where
    V: Add<Output = V> + Mul<f64, Output = V>,
{
    adv + per * w.mu
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lsgan_d(real: f64, fake: f64) -> f64 {
        let tape = Tape::<f64>::new();
        let r = tape.constant(Tensor::full(vec![2, 1, 3, 3], real));
        let f = tape.constant(Tensor::full(vec![2, 1, 3, 3], fake));
        lsgan_d_loss(r, f, &LossWeights::default()).item()
    }

    fn lsgan_g(fake: f64) -> f64 {
        let tape = Tape::<f64>::new();
        lsgan_g_loss(tape.constant(Tensor::full(vec![4, 1, 2, 2], fake)), &LossWeights::default()).item()
    }

    #[test]
    fn lsgan_values() {
        assert_eq!(lsgan_d(1.0, 0.0), 0.0);
        assert_eq!(lsgan_d(0.5, 0.5), 0.5);
        assert_eq!(lsgan_d(0.0, 1.0), 2.0);
        assert_eq!(lsgan_g(1.0), 0.0);
        assert_eq!(lsgan_g(0.0), 1.0);
        assert_eq!(lsgan_g(0.5), 0.25);
    }

    #[test]
    fn swapped_labels_mirror_standard() {
        let w = LossWeights { labels: LabelConvention::Swapped, ..Default::default() };
        let tape = Tape::<f64>::new();
        let r = tape.constant(Tensor::full(vec![1, 1, 2, 2], 0.0));
        let f = tape.constant(Tensor::full(vec![1, 1, 2, 2], 1.0));
        assert_eq!(lsgan_d_loss(r, f, &w).item(), 0.0);
        assert_eq!(lsgan_g_loss(f, &w).item(), 1.0);
    }

    #[test]
    fn affine_combinations() {
        let w = LossWeights::default();
        let a = RoutedTerm::new(0.4, BatchSource::Anchor, PatchScale::Fine);
        let b = RoutedTerm::new(0.6, BatchSource::Augmented, PatchScale::Coarse);
        assert_eq!(combined_adv_loss(a, b, &w).unwrap(), 1.0);
        let w0 = LossWeights { lambda1: 0.0, lambda2: 0.0, ..w };
        assert_eq!(combined_adv_loss(a, b, &w0).unwrap(), 0.4);
        assert_eq!(combined_per_loss(0.2, 0.3, &w), 0.5);
        assert_eq!(combined_per_loss(0.2, 0.3, &w0), 0.2);
        assert_eq!(total_loss(0.5, 0.2, &w), 1.5);
        assert_eq!(total_loss(0.5, 0.0, &w), 0.5);
    }

    #[test]
    fn misrouted_terms_are_contract_errors() {
        let w = LossWeights::default();
        let good_a = RoutedTerm::new(0.1, BatchSource::Anchor, PatchScale::Fine);
        let good_b = RoutedTerm::new(0.1, BatchSource::Augmented, PatchScale::Coarse);
        let bad_a = RoutedTerm::new(0.1, BatchSource::Anchor, PatchScale::Coarse);
        let bad_b = RoutedTerm::new(0.1, BatchSource::Augmented, PatchScale::Fine);
        assert!(matches!(combined_adv_loss(bad_a, good_b, &w), Err(Error::Contract(_))));
        assert!(matches!(combined_adv_loss(good_a, bad_b, &w), Err(Error::Contract(_))));
        assert!(matches!(combined_adv_loss(good_b, good_a, &w), Err(Error::Contract(_))));
    }

    #[test]
    fn perceptual_of_unit_difference_is_one() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(vec![1, 4, 3, 3], 2.0));
        let b = tape.constant(Tensor::full(vec![1, 4, 3, 3], 1.0));
        assert_eq!(perceptual_from_features(&[a], &[b]).unwrap().item(), 1.0);
        assert_eq!(perceptual_from_features(&[a], &[a]).unwrap().item(), 0.0);
        let c = tape.constant(Tensor::full(vec![1, 4, 3, 2], 1.0));
        assert!(matches!(perceptual_from_features(&[a], &[c]), Err(Error::Contract(_))));
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights { mu: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { lambda1: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }
}
