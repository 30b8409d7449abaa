use serde::{Deserialize, Serialize};

use super::{leaky_gain, Conv, Network, ParamSet, LEAKY_SLOPE};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{conv_out, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchScale {
    Fine,
    Coarse,
}

impl PatchScale {
    pub fn name(self) -> &'static str {
        match self {
            PatchScale::Fine => "fine",
            PatchScale::Coarse => "coarse",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub const fn new(kernel: usize, stride: usize) -> Self {
        Self { kernel, stride }
    }

    /// Zero padding that keeps stride-1 layers size-preserving.
    pub fn padding(self) -> usize {
        (self.kernel - 1) / 2
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDiscriminatorSpec {
    pub conv_layers: Vec<ConvLayer>,
    pub base_channels: usize,
    pub patch_scale: PatchScale,
    pub in_channels: usize,
}

/// Closed-form receptive field: `rf += (k - 1) * jump; jump *= stride`.
pub fn receptive_field(layers: &[ConvLayer]) -> usize {
    let (mut rf, mut jump) = (1usize, 1usize);
    for l in layers {
        rf += (l.kernel - 1) * jump;
        jump *= l.stride;
    }
    rf
}

/// Fine and coarse discriminator layouts, built and ratio-checked together.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorPairSpec {
    pub fine: PatchDiscriminatorSpec,
    pub coarse: PatchDiscriminatorSpec,
}

impl Default for DiscriminatorPairSpec {
    /// Receptive fields 8 and 30 pixels, ratio 3.75; both fit a 32-pixel image.
    fn default() -> Self {
        Self {
            fine: PatchDiscriminatorSpec {
                conv_layers: vec![ConvLayer::new(4, 2), ConvLayer::new(3, 1)],
                base_channels: 16,
                patch_scale: PatchScale::Fine,
                in_channels: 3,
            },
            coarse: PatchDiscriminatorSpec {
                conv_layers: vec![
                    ConvLayer::new(4, 2),
                    ConvLayer::new(4, 2),
                    ConvLayer::new(4, 2),
                    ConvLayer::new(2, 1),
                ],
                base_channels: 16,
                patch_scale: PatchScale::Coarse,
                in_channels: 3,
            },
        }
    }
}

pub const RF_RATIO_RANGE: (f64, f64) = (3.5, 4.5);

impl DiscriminatorPairSpec {
    pub fn get(&self, scale: PatchScale) -> &PatchDiscriminatorSpec {
        match scale {
            PatchScale::Fine => &self.fine,
            PatchScale::Coarse => &self.coarse,
        }
    }

    pub fn ratio(&self) -> f64 {
        receptive_field(&self.coarse.conv_layers) as f64 / receptive_field(&self.fine.conv_layers) as f64
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.ratio();
        if !(RF_RATIO_RANGE.0..=RF_RATIO_RANGE.1).contains(&r) {
            return Err(Error::config(format!(
                "coarse/fine receptive-field ratio {r:.3} outside [{}, {}]",
                RF_RATIO_RANGE.0, RF_RATIO_RANGE.1
            )));
        }
        Ok(())
    }
}

/// PatchGAN-style discriminator: strided convolutions with leaky ReLU and a
/// 1×1 scoring head producing a raw (unbounded) score map.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDiscriminator<T> {
    spec: PatchDiscriminatorSpec,
    params: ParamSet<T>,
    layers: Vec<Conv>,
    head: Conv,
}

fn validate_spec(spec: &PatchDiscriminatorSpec, resolution: usize) -> Result<()> {
    if spec.conv_layers.is_empty() {
        return Err(Error::config("discriminator needs at least one layer"));
    }
    if spec.conv_layers.iter().any(|l| l.kernel == 0 || l.stride == 0) {
        return Err(Error::config("kernel and stride must be >= 1"));
    }
    if spec.base_channels == 0 || spec.in_channels == 0 {
        return Err(Error::config("discriminator channels must be positive"));
    }
    let rf = receptive_field(&spec.conv_layers);
    if rf > resolution {
        return Err(Error::config(format!(
            "{} discriminator receptive field {rf} exceeds image size {resolution}",
            spec.patch_scale.name()
        )));
    }
    let mut size = resolution;
    for l in &spec.conv_layers {
        size = conv_out(size, l.kernel, l.stride, l.padding())
            .filter(|&s| s >= 1)
            .ok_or_else(|| Error::config("discriminator score map collapses to nothing"))?;
    }
    Ok(())
}

pub fn build_patch_discriminator<T: Real>(
    scale: PatchScale,
    pair: &DiscriminatorPairSpec,
    resolution: usize,
    seed: u64,
) -> Result<PatchDiscriminator<T>> {
    pair.validate()?;
    let spec = pair.get(scale);
    if spec.patch_scale != scale {
        return Err(Error::config(format!(
            "spec for the {} slot is labelled {}",
            scale.name(),
            spec.patch_scale.name()
        )));
    }
    validate_spec(spec, resolution)?;
    Ok(PatchDiscriminator::init(spec, rng::derive(seed, scale.name())))
}

impl<T: Real> PatchDiscriminator<T> {
    fn init(spec: &PatchDiscriminatorSpec, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0);
        let mut params = ParamSet::new();
        let gain = leaky_gain(LEAKY_SLOPE);
        let mut layers = Vec::new();
        let mut prev = spec.in_channels;
        for (i, l) in spec.conv_layers.iter().enumerate() {
            let out = spec.base_channels << i.min(3);
            layers.push(Conv::new(&mut params, &format!("conv{i}"), prev, out, l.kernel, l.stride, l.padding(), gain, &mut rng));
            prev = out;
        }
        let head = Conv::new(&mut params, "score", prev, 1, 1, 1, 0, 1.0, &mut rng);
        Self { spec: spec.clone(), params, layers, head }
    }

    pub fn spec(&self) -> &PatchDiscriminatorSpec {
        &self.spec
    }

    pub fn scale(&self) -> PatchScale {
        self.spec.patch_scale
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.spec.conv_layers)
    }

    pub fn forward<'t>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Var<'t, T> {
        let mut h = x;
        for conv in &self.layers {
            h = conv.forward(p, h).leaky_relu(LEAKY_SLOPE);
        }
        self.head.forward(p, h)
    }

    pub fn score(&self, x: &Tensor<T>) -> Tensor<T> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        self.forward(&p, tape.constant(x.clone())).value()
    }
}

impl<T: Real> Network<T> for PatchDiscriminator<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
    fn architecture(&self) -> String {
        let mut s = format!("patch-discriminator;dtype={};scale={}", T::DTYPE, self.spec.patch_scale.name());
        for c in self.layers.iter().chain(std::iter::once(&self.head)) {
            s.push(';');
            s.push_str(&c.describe());
        }
        s
    }
}

/// Measure the receptive field empirically: build a single-channel copy of
/// the layer stack with positive weights, backpropagate from the central
/// output unit and return the side of the bounding box of input pixels with
/// nonzero gradient.
pub fn probe_receptive_field(layers: &[ConvLayer]) -> usize {
    let rf = receptive_field(layers);
    let total_stride: usize = layers.iter().map(|l| l.stride).product();
    let size = 4 * rf + 4 * total_stride;
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::full(vec![1, 1, size, size], 1.0));
    let mut h = x;
    for l in layers {
        let w = tape.constant(Tensor::full(vec![1, 1, l.kernel, l.kernel], 1.0 / (l.kernel * l.kernel) as f64));
        h = h.conv2d(w, None, l.stride, l.padding()).leaky_relu(LEAKY_SLOPE);
    }
    let (_, _, ho, wo) = h.value().dims4();
    let mut mask = vec![0.0; ho * wo];
    mask[(ho / 2) * wo + wo / 2] = 1.0;
    let unit = (h * tape.constant(Tensor::new(vec![1, 1, ho, wo], mask))).sum_all();
    let grads = unit.backward();
    let g = grads.get(&x).expect("input gradient");
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for yy in 0..size {
        for xx in 0..size {
            if g.data()[yy * size + xx] != 0.0 {
                x0 = x0.min(xx);
                x1 = x1.max(xx);
                y0 = y0.min(yy);
                y1 = y1.max(yy);
            }
        }
    }
    assert!(x0 <= x1, "probe found no support");
    debug_assert_eq!(x1 - x0, y1 - y0);
    x1 - x0 + 1
}
