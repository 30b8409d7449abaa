use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{checkpoint, leaky_gain, Conv, Network, ParamSet};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{conv_out, Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorKind {
    FixedRandom { seed: u64 },
    /// Weights read from a checkpoint directory matching `layers`.
    ExternalPretrained { path: PathBuf },
}

/// One extractor layer: `(out_channels, kernel, stride)`, ReLU after each.
pub type ExtractorLayer = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub kind: ExtractorKind,
    /// 1-based indices of the layers whose activations are exposed.
    pub layer_taps: Vec<usize>,
    pub layers: Vec<ExtractorLayer>,
    pub in_channels: usize,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::FixedRandom { seed: 1234 },
            layer_taps: vec![2, 4],
            layers: vec![(8, 3, 1), (16, 3, 2), (16, 3, 1), (32, 3, 2)],
            in_channels: 3,
        }
    }
}

/// Frozen convolutional feature stack used by the perceptual loss and the
/// feature-space metrics. Its parameters are only ever bound as constants.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T> {
    spec: FeatureExtractorSpec,
    params: ParamSet<T>,
    convs: Vec<Conv>,
}

pub fn build_feature_extractor<T: Real>(spec: &FeatureExtractorSpec) -> Result<FeatureExtractor<T>> {
    if spec.layers.is_empty() {
        return Err(Error::config("feature extractor needs at least one layer"));
    }
    if spec.layer_taps.is_empty() {
        return Err(Error::config("feature extractor needs at least one tap"));
    }
    for &t in &spec.layer_taps {
        if t == 0 || t > spec.layers.len() {
            return Err(Error::config(format!("tap {t} outside 1..={}", spec.layers.len())));
        }
    }
    if spec.layer_taps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("extractor taps must be strictly increasing"));
    }
    let seed = match &spec.kind {
        ExtractorKind::FixedRandom { seed } => *seed,
        ExtractorKind::ExternalPretrained { .. } => 0,
    };
    let mut rng = rng::stream(rng::derive(seed, "extractor"), 0);
    let mut params = ParamSet::new();
    let mut convs = Vec::new();
    let mut prev = spec.in_channels;
    for (i, &(out, k, s)) in spec.layers.iter().enumerate() {
        convs.push(Conv::new(&mut params, &format!("feat{i}"), prev, out, k, s, (k - 1) / 2, leaky_gain(0.0), &mut rng));
        prev = out;
    }
    let mut ex = FeatureExtractor { spec: spec.clone(), params, convs };
    if let ExtractorKind::ExternalPretrained { path } = &spec.kind {
        let fingerprint = ex.architecture_fingerprint();
        let (loaded, _) = checkpoint::load_params::<T>(path, &fingerprint).map_err(|e| match e {
            Error::Ingestion(m) => Error::Ingestion(m),
            other => Error::ingestion(format!("extractor weights at {}: {other}", path.display())),
        })?;
        ex.params = loaded;
    }
    Ok(ex)
}

impl<T: Real> FeatureExtractor<T> {
    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    pub fn taps(&self) -> &[usize] {
        &self.spec.layer_taps
    }

    /// Activations at every tap, in tap order. The extractor's own weights
    /// enter `tape` as constants; gradients still flow to `x`.
    pub fn features<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Vec<Var<'t, T>> {
        let p = self.params.bind(tape, false);
        let last = *self.spec.layer_taps.last().expect("validated nonempty");
        let mut out = Vec::with_capacity(self.spec.layer_taps.len());
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate().take(last) {
            h = conv.forward(&p, h).relu();
            if self.spec.layer_taps.contains(&(i + 1)) {
                out.push(h);
            }
        }
        out
    }

    pub fn features_of(&self, x: &Tensor<T>) -> Vec<Tensor<T>> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        self.features(&tape, xv).iter().map(|v| v.value()).collect()
    }

    /// `(C_j, H_j, W_j)` of every tapped layer for a `channels×height×width` input.
    pub fn tap_shapes(&self, height: usize, width: usize) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (height, width);
        let mut shapes = Vec::new();
        for (i, &(out, k, s)) in self.spec.layers.iter().enumerate() {
            h = conv_out(h, k, s, (k - 1) / 2).unwrap_or(0);
            w = conv_out(w, k, s, (k - 1) / 2).unwrap_or(0);
            if self.spec.layer_taps.contains(&(i + 1)) {
                shapes.push((out, h, w));
            }
        }
        shapes
    }
}

impl<T: Real> Network<T> for FeatureExtractor<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
    fn architecture(&self) -> String {
        let mut s = format!("feature-extractor;dtype={}", T::DTYPE);
        for c in &self.convs {
            s.push(';');
            s.push_str(&c.describe());
            s.push_str("+relu");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> Tensor<f32> {
        Tensor::from_f64(vec![1, 3, 32, 32], &(0..3072).map(|i| ((i * 31) % 97) as f64 / 96.0).collect::<Vec<_>>())
    }

    #[test]
    fn fixed_random_is_reproducible() {
        let a = build_feature_extractor::<f32>(&FeatureExtractorSpec::default()).unwrap();
        let b = build_feature_extractor::<f32>(&FeatureExtractorSpec::default()).unwrap();
        assert_eq!(a.features_of(&input()), b.features_of(&input()));
    }

    #[test]
    fn tap_shapes_follow_layer_arithmetic() {
        let ex = build_feature_extractor::<f32>(&FeatureExtractorSpec::default()).unwrap();
        // 32 -> 32 (s1) -> 16 (s2) -> 16 (s1) -> 8 (s2); taps at layers 2 and 4
        assert_eq!(ex.tap_shapes(32, 32), vec![(16, 16, 16), (32, 8, 8)]);
        let feats = ex.features_of(&input());
        for (f, (c, h, w)) in feats.iter().zip(ex.tap_shapes(32, 32)) {
            assert_eq!(f.shape(), &[1, c, h, w]);
        }
    }

    #[test]
    fn weights_receive_no_gradient() {
        let ex = build_feature_extractor::<f64>(&FeatureExtractorSpec::default()).unwrap();
        let tape = Tape::new();
        let x = tape.param(input().cast());
        let loss = ex.features(&tape, x)[1].sum_all();
        let g = loss.backward();
        assert!(g.get(&x).is_some());
        assert_eq!(ex.params(), build_feature_extractor::<f64>(&FeatureExtractorSpec::default()).unwrap().params());
    }

    #[test]
    fn bad_taps_rejected() {
        let mut spec = FeatureExtractorSpec::default();
        spec.layer_taps = vec![5];
        assert!(build_feature_extractor::<f32>(&spec).is_err());
    }

    #[test]
    fn missing_external_weights_is_ingestion_error() {
        let spec = FeatureExtractorSpec {
            kind: ExtractorKind::ExternalPretrained { path: "/nonexistent/weights".into() },
            ..Default::default()
        };
        assert!(matches!(build_feature_extractor::<f32>(&spec), Err(Error::Ingestion(_))));
    }
}
