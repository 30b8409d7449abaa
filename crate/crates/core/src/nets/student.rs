use serde::{Deserialize, Serialize};

use super::{leaky_gain, Conv, Network, ParamSet, LEAKY_SLOPE};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Real, Tensor};

/// Encoder-decoder translator. The first encoder stage keeps full
/// resolution; every further stage halves it. The decoder mirrors the
/// downsampling stages and (optionally) concatenates the matching encoder
/// activations before each convolution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentTranslatorSpec {
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub skip_connections: bool,
    pub channels: usize,
}

impl Default for StudentTranslatorSpec {
    fn default() -> Self {
        Self {
            encoder_widths: vec![16, 32, 64],
            decoder_widths: vec![32, 16],
            skip_connections: true,
            channels: 3,
        }
    }
}

impl StudentTranslatorSpec {
    pub fn validate(&self, resolution: usize) -> Result<()> {
        let e = self.encoder_widths.len();
        if e < 1 {
            return Err(Error::config("student needs at least one encoder stage"));
        }
        if self.decoder_widths.len() != e - 1 {
            return Err(Error::config(format!(
                "student has {} downsampling stages but {} decoder stages",
                e - 1,
                self.decoder_widths.len()
            )));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(Error::config("student widths must be positive"));
        }
        let factor = 1usize << (e - 1);
        if resolution % factor != 0 {
            return Err(Error::config(format!(
                "resolution {resolution} is not divisible by the student's downsampling factor {factor}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Student<T> {
    spec: StudentTranslatorSpec,
    params: ParamSet<T>,
    encoder: Vec<Conv>,
    decoder: Vec<Conv>,
    head: Conv,
}

pub fn build_student<T: Real>(spec: &StudentTranslatorSpec, resolution: usize, seed: u64) -> Result<Student<T>> {
    spec.validate(resolution)?;
    let mut rng = rng::stream(rng::derive(seed, "student-init"), 0);
    let mut params = ParamSet::new();
    let gain = leaky_gain(LEAKY_SLOPE);
    let mut encoder = Vec::new();
    let mut prev = spec.channels;
    for (i, &w) in spec.encoder_widths.iter().enumerate() {
        let (k, s) = if i == 0 { (3, 1) } else { (4, 2) };
        encoder.push(Conv::new(&mut params, &format!("enc{i}"), prev, w, k, s, 1, gain, &mut rng));
        prev = w;
    }
    let mut decoder = Vec::new();
    let e = spec.encoder_widths.len();
    for (j, &w) in spec.decoder_widths.iter().enumerate() {
        let skip = if spec.skip_connections { spec.encoder_widths[e - 2 - j] } else { 0 };
        decoder.push(Conv::new(&mut params, &format!("dec{j}"), prev + skip, w, 3, 1, 1, gain, &mut rng));
        prev = w;
    }
    let head = Conv::new(&mut params, "head", prev, spec.channels, 3, 1, 1, 1.0, &mut rng);
    Ok(Student { spec: spec.clone(), params, encoder, decoder, head })
}

impl<T: Real> Student<T> {
    pub fn spec(&self) -> &StudentTranslatorSpec {
        &self.spec
    }

    pub fn forward<'t>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> Var<'t, T> {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for conv in &self.encoder {
            h = conv.forward(p, h).leaky_relu(LEAKY_SLOPE);
            skips.push(h);
        }
        let e = self.encoder.len();
        for (j, conv) in self.decoder.iter().enumerate() {
            h = h.upsample2x();
            if self.spec.skip_connections {
                h = Var::cat(&[h, skips[e - 2 - j]], 1);
            }
            h = conv.forward(p, h).leaky_relu(LEAKY_SLOPE);
        }
        self.head.forward(p, h).sigmoid()
    }

    /// Gradient-free translation of a batch `[N, C, H, W]`.
    pub fn translate(&self, x: &Tensor<T>) -> Tensor<T> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        self.forward(&p, tape.constant(x.clone())).value()
    }
}

impl<T: Real> Network<T> for Student<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }
    fn architecture(&self) -> String {
        let mut s = format!("student;dtype={};skips={}", T::DTYPE, self.spec.skip_connections);
        for c in self.encoder.iter().chain(&self.decoder) {
            s.push(';');
            s.push_str(&c.describe());
        }
        s.push(';');
        s.push_str(&self.head.describe());
        s.push_str(";sigmoid");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_matches_input_shape_and_is_bounded() {
        let spec = StudentTranslatorSpec {
            encoder_widths: vec![4, 8, 8],
            decoder_widths: vec![8, 4],
            skip_connections: true,
            channels: 3,
        };
        let s = build_student::<f32>(&spec, 32, 0).unwrap();
        let x = Tensor::from_f64(vec![2, 3, 32, 32], &(0..6144).map(|i| (i % 17) as f64 / 16.0).collect::<Vec<_>>());
        let y = s.translate(&x);
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn without_skips_still_shape_preserving() {
        let spec = StudentTranslatorSpec {
            encoder_widths: vec![4, 4],
            decoder_widths: vec![4],
            skip_connections: false,
            channels: 3,
        };
        let s = build_student::<f64>(&spec, 16, 0).unwrap();
        let y = s.translate(&Tensor::zeros(vec![1, 3, 16, 16]));
        assert_eq!(y.shape(), &[1, 3, 16, 16]);
    }

    #[test]
    fn bad_specs_rejected() {
        let mut spec = StudentTranslatorSpec::default();
        spec.decoder_widths.pop();
        assert!(build_student::<f32>(&spec, 32, 0).is_err());
        assert!(build_student::<f32>(&StudentTranslatorSpec::default(), 30, 0).is_err());
    }
}
