use serde::{Deserialize, Serialize};

use super::{leaky_gain, Conv, Dense, Network, ParamSet, LEAKY_SLOPE};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Shape of the shared latent space (standard normal).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub dim: usize,
}

impl Default for LatentSpec {
    fn default() -> Self {
        Self { dim: 128 }
    }
}

impl LatentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config(format!("latent dim must be >= 2, got {}", self.dim)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherGeneratorSpec {
    pub latent: LatentSpec,
    /// Channels after each upsampling stage.
    pub channel_widths: Vec<usize>,
    pub output_resolution: usize,
    pub channels: usize,
}

impl Default for TeacherGeneratorSpec {
    fn default() -> Self {
        Self {
            latent: LatentSpec::default(),
            channel_widths: vec![64, 32, 16, 8],
            output_resolution: 32,
            channels: 3,
        }
    }
}

impl TeacherGeneratorSpec {
    /// Spatial size of the block produced by the latent projection.
    pub fn base_resolution(&self) -> Result<usize> {
        self.latent.validate()?;
        let stages = self.channel_widths.len();
        if stages < 2 {
            return Err(Error::config("teacher generator needs at least two stages"));
        }
        if self.channel_widths.iter().any(|&w| w == 0) || self.channels == 0 {
            return Err(Error::config("teacher channel widths must be positive"));
        }
        let scale = 1usize << stages;
        if self.output_resolution % scale != 0 || self.output_resolution / scale < 1 {
            return Err(Error::config(format!(
                "output resolution {} is not reachable with {} doubling stages",
                self.output_resolution, stages
            )));
        }
        Ok(self.output_resolution / scale)
    }
}

/// Convolutional generator `z -> image`. Source and target teachers are two
/// instances of this type with separate parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    spec: TeacherGeneratorSpec,
    params: ParamSet<T>,
    project: Dense,
    stages: Vec<Conv>,
    to_rgb: Conv,
    base: usize,
}

pub struct GeneratorOutput<'t, T: Real> {
    pub image: Var<'t, T>,
    /// Activations of the second-to-last upsampling stage.
    pub penultimate: Var<'t, T>,
}

pub fn build_teacher_generator<T: Real>(spec: &TeacherGeneratorSpec, seed: u64) -> Result<Generator<T>> {
    let base = spec.base_resolution()?;
    let mut rng = rng::stream(rng::derive(seed, "teacher-init"), 0);
    let mut params = ParamSet::new();
    let gain = leaky_gain(LEAKY_SLOPE);
    let w0 = spec.channel_widths[0];
    let project = Dense::new(&mut params, "project", spec.latent.dim, w0 * base * base, gain, &mut rng);
    let mut stages = Vec::new();
    let mut prev = w0;
    for (i, &w) in spec.channel_widths.iter().enumerate() {
        stages.push(Conv::new(&mut params, &format!("stage{i}"), prev, w, 3, 1, 1, gain, &mut rng));
        prev = w;
    }
    let to_rgb = Conv::new(&mut params, "to_rgb", prev, spec.channels, 3, 1, 1, 1.0, &mut rng);
    Ok(Generator { spec: spec.clone(), params, project, stages, to_rgb, base })
}

/// Independent copy of a generator's parameters.
pub fn clone_generator<T: Real>(g: &Generator<T>) -> Generator<T> {
    g.clone()
}

impl<T: Real> Generator<T> {
    pub fn spec(&self) -> &TeacherGeneratorSpec {
        &self.spec
    }

    pub fn resolution(&self) -> usize {
        self.spec.output_resolution
    }

    pub fn forward<'t>(&self, p: &[Var<'t, T>], z: Var<'t, T>) -> GeneratorOutput<'t, T> {
        let n = z.shape()[0];
        let w0 = self.spec.channel_widths[0];
        let mut h = self
            .project
            .forward(p, z)
            .leaky_relu(LEAKY_SLOPE)
            .reshape(vec![n, w0, self.base, self.base])
            .pixel_norm();
        let mut penultimate = h;
        let last = self.stages.len() - 1;
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.forward(p, h.upsample2x()).leaky_relu(LEAKY_SLOPE).pixel_norm();
            if i + 1 == last {
                penultimate = h;
            }
        }
        GeneratorOutput { image: self.to_rgb.forward(p, h).sigmoid(), penultimate }
    }

    /// Gradient-free generation of a batch of latent rows `[N, dim]`.
    pub fn generate(&self, z: &Tensor<T>) -> Tensor<T> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        self.forward(&p, tape.constant(z.clone())).image.value()
    }
}

impl<T: Real> Network<T> for Generator<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
    fn architecture(&self) -> String {
        let mut s = format!(
            "teacher-generator;dtype={};latent={};base={};project({}->{})+pixnorm",
            T::DTYPE,
            self.spec.latent.dim,
            self.base,
            self.project.in_dim,
            self.project.out_dim
        );
        for c in &self.stages {
            s.push_str(";up2x+");
            s.push_str(&c.describe());
            s.push_str("+leaky+pixnorm");
        }
        s.push(';');
        s.push_str(&self.to_rgb.describe());
        s.push_str(";sigmoid");
        s
    }
}
