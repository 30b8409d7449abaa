//! Network definitions: teacher generator, student translator, patch
//! discriminators and the frozen perceptual feature extractor.
//!
//! Every network keeps its weights in a [`ParamSet`] and runs its forward
//! pass on an autograd [`Tape`]; binding the set with [`ParamSet::bind`]
//! decides whether the weights are trainable on that tape.

mod checkpoint;
mod discriminator;
mod extractor;
mod generator;
mod student;

pub use checkpoint::{load_network, load_params, read_header, save_network, save_params, CheckpointHeader, ParamEntry};
pub use discriminator::{
    build_patch_discriminator, probe_receptive_field, receptive_field, ConvLayer,
    DiscriminatorPairSpec, PatchDiscriminator, PatchDiscriminatorSpec, PatchScale,
};
pub use extractor::{build_feature_extractor, ExtractorKind, FeatureExtractor, FeatureExtractorSpec};
pub use generator::{
    build_teacher_generator, clone_generator, Generator, GeneratorOutput, LatentSpec,
    TeacherGeneratorSpec,
};
pub use student::{build_student, Student, StudentTranslatorSpec};

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::autograd::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.params.push(Param { name: name.into(), value });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Put every parameter on `tape`; `trainable = false` freezes them.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Vec<Var<'t, T>> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// SHA-256 over names, shapes and raw little-endian values.
    pub fn content_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in p.value.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex(&h.finalize())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast() })
                .collect(),
        }
    }

    /// Sum of squared L2 norms, per parameter.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|p| {
                let s: f64 = p.value.data().iter().map(|v| v.as_f64().powi(2)).sum();
                (p.name.clone(), s.sqrt())
            })
            .collect()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Common surface of the trainable networks.
pub trait Network<T: Real> {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    /// Canonical text description of the architecture (no weights).
    fn architecture(&self) -> String;

    fn architecture_fingerprint(&self) -> String {
        hex(&Sha256::digest(self.architecture().as_bytes()))
    }
}

fn he_normal<T: Real>(rng: &mut impl Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<T> {
    let std = gain / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            T::lit(v * std)
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

/// A square-kernel convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    w: usize,
    b: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = he_normal(rng, &[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, gain);
        let w = ps.push(format!("{name}.weight"), w);
        let b = ps.push(format!("{name}.bias"), Tensor::zeros(vec![out_ch]));
        Self { w, b, in_ch, out_ch, kernel, stride, pad }
    }

    pub fn forward<'t, T: Real>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(p[self.w], Some(p[self.b]), self.stride, self.pad)
    }

    pub fn describe(&self) -> String {
        format!("conv({}->{},k{},s{},p{})", self.in_ch, self.out_ch, self.kernel, self.stride, self.pad)
    }
}

/// A fully connected layer with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    w: usize,
    b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = ps.push(format!("{name}.weight"), he_normal(rng, &[out_dim, in_dim], in_dim, gain));
        let b = ps.push(format!("{name}.bias"), Tensor::zeros(vec![out_dim]));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<'t, T: Real>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Var<'t, T> {
        x.linear(p[self.w], Some(p[self.b]))
    }
}
