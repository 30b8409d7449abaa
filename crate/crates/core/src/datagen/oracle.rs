use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{quantize8, Image};
use crate::error::{Error, Result};

/// Analytic style transforms that define the ground-truth target domain.
///
/// Text form: `invert_colors`, `edge_sketch:<strength>`, `posterize:<levels>`,
/// with `|` chaining transforms left to right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OracleTransform {
    InvertColors,
    /// Blend of the image with a dark-lines-on-white Sobel sketch of its
    /// luminance; `strength` in `[0, 1]` is the sketch weight.
    EdgeSketch { strength: f32 },
    /// Uniform quantization to `levels` values per channel.
    Posterize { levels: u32 },
    Compose(Vec<OracleTransform>),
}

/// Gain applied to the Sobel magnitude before it saturates.
const EDGE_GAIN: f32 = 2.0;

impl OracleTransform {
    pub fn validate(&self) -> Result<()> {
        match self {
            OracleTransform::InvertColors => Ok(()),
            OracleTransform::EdgeSketch { strength } => {
                if (0.0..=1.0).contains(strength) {
                    Ok(())
                } else {
                    Err(Error::config(format!("edge_sketch strength must be in [0, 1], got {strength}")))
                }
            }
            OracleTransform::Posterize { levels } => {
                if (2..=256).contains(levels) {
                    Ok(())
                } else {
                    Err(Error::config(format!("posterize levels must be in 2..=256, got {levels}")))
                }
            }
            OracleTransform::Compose(parts) => {
                if parts.is_empty() {
                    return Err(Error::config("compose needs at least one transform"));
                }
                parts.iter().try_for_each(|p| p.validate())
            }
        }
    }
}

impl fmt::Display for OracleTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleTransform::InvertColors => write!(f, "invert_colors"),
            OracleTransform::EdgeSketch { strength } => write!(f, "edge_sketch:{strength}"),
            OracleTransform::Posterize { levels } => write!(f, "posterize:{levels}"),
            OracleTransform::Compose(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("|")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

fn parse_single(s: &str) -> Result<OracleTransform> {
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k.trim(), Some(a.trim())),
        None => (s.trim(), None),
    };
    let bad = |what: &str| Error::config(format!("invalid {what} in oracle transform `{s}`"));
    let t = match (kind, arg) {
        ("invert_colors", None) => OracleTransform::InvertColors,
        ("edge_sketch", Some(a)) => OracleTransform::EdgeSketch { strength: a.parse().map_err(|_| bad("strength"))? },
        ("edge_sketch", None) => OracleTransform::EdgeSketch { strength: 1.0 },
        ("posterize", Some(a)) => OracleTransform::Posterize { levels: a.parse().map_err(|_| bad("levels"))? },
        ("invert_colors", Some(_)) | ("posterize", None) => return Err(bad("parameter")),
        _ => return Err(Error::config(format!("unknown oracle transform kind `{kind}`"))),
    };
    t.validate()?;
    Ok(t)
}

impl FromStr for OracleTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('|').collect();
        if parts.len() == 1 {
            return parse_single(parts[0]);
        }
        let t = OracleTransform::Compose(parts.into_iter().map(parse_single).collect::<Result<_>>()?);
        t.validate()?;
        Ok(t)
    }
}

impl TryFrom<String> for OracleTransform {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OracleTransform> for String {
    fn from(t: OracleTransform) -> String {
        t.to_string()
    }
}

fn luminance(x: &Image) -> Vec<f32> {
    let hw = x.height * x.width;
    if x.channels == 3 {
        (0..hw).map(|i| 0.299 * x.data[i] + 0.587 * x.data[hw + i] + 0.114 * x.data[2 * hw + i]).collect()
    } else {
        x.data[..hw].to_vec()
    }
}

fn sobel_sketch(x: &Image) -> Vec<f32> {
    let (h, w) = (x.height as isize, x.width as isize);
    let lum = luminance(x);
    let at = |y: isize, x: isize| lum[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut out = Vec::with_capacity(lum.len());
    for y in 0..h {
        for xx in 0..w {
            let gx = at(y - 1, xx + 1) + 2.0 * at(y, xx + 1) + at(y + 1, xx + 1)
                - at(y - 1, xx - 1)
                - 2.0 * at(y, xx - 1)
                - at(y + 1, xx - 1);
            let gy = at(y + 1, xx - 1) + 2.0 * at(y + 1, xx) + at(y + 1, xx + 1)
                - at(y - 1, xx - 1)
                - 2.0 * at(y - 1, xx)
                - at(y - 1, xx + 1);
            let mag = (gx * gx + gy * gy).sqrt() / 4.0;
            out.push(1.0 - (EDGE_GAIN * mag).min(1.0));
        }
    }
    out
}

pub fn apply_oracle(t: &OracleTransform, x: &Image) -> Result<Image> {
    t.validate()?;
    if !x.in_unit_range() {
        return Err(Error::contract("oracle input must lie in [0, 1]"));
    }
    let out = match t {
        OracleTransform::InvertColors => {
            Image { data: x.data.iter().map(|&v| quantize8(1.0 - v)).collect(), ..x.clone() }
        }
        OracleTransform::EdgeSketch { strength } => {
            let sketch = sobel_sketch(x);
            let hw = x.height * x.width;
            let data = x
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| quantize8((1.0 - strength) * v + strength * sketch[i % hw]))
                .collect();
            Image { data, ..x.clone() }
        }
        OracleTransform::Posterize { levels } => {
            let q = (*levels - 1) as f32;
            Image { data: x.data.iter().map(|&v| quantize8((v * q).round() / q)).collect(), ..x.clone() }
        }
        OracleTransform::Compose(parts) => {
            let mut cur = x.clone();
            for p in parts {
                cur = apply_oracle(p, &cur)?;
            }
            cur
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_source_image, SyntheticSpec};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn sample(seed: u64) -> Image {
        generate_source_image(&SyntheticSpec::default(), seed).unwrap()
    }

    #[test]
    fn invert_zeros_gives_ones() {
        let out = apply_oracle(&OracleTransform::InvertColors, &Image::filled(3, 16, 16, 0.0)).unwrap();
        assert!(out.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn posterize_two_levels_is_binary() {
        let out = apply_oracle(&OracleTransform::Posterize { levels: 2 }, &sample(4)).unwrap();
        let uniq: BTreeSet<u32> = out.data.iter().map(|v| v.to_bits()).collect();
        assert!(uniq.iter().all(|&b| b == 0f32.to_bits() || b == 1f32.to_bits()));
    }

    #[test]
    fn edge_sketch_flat_image_is_white_blend() {
        let x = Image::filled(3, 16, 16, 0.2);
        let out = apply_oracle(&OracleTransform::EdgeSketch { strength: 1.0 }, &x).unwrap();
        assert!(out.data.iter().all(|&v| v == 1.0));
        let out = apply_oracle(&OracleTransform::EdgeSketch { strength: 0.0 }, &x).unwrap();
        assert_eq!(out.data, x.data);
    }

    #[test]
    fn text_round_trip() {
        for s in ["invert_colors", "edge_sketch:0.5", "posterize:4", "posterize:3|edge_sketch:0.75|invert_colors"] {
            let t: OracleTransform = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<OracleTransform>(&json).unwrap(), t);
        }
    }

    #[test]
    fn unknown_or_bad_kinds_are_config_errors() {
        for s in ["sepia", "posterize", "posterize:1", "edge_sketch:2", "invert_colors:3", ""] {
            assert!(matches!(s.parse::<OracleTransform>(), Err(Error::Config(_))), "{s}");
        }
    }

    #[test]
    fn out_of_range_input_rejected() {
        let x = Image::filled(3, 16, 16, 1.5);
        assert!(apply_oracle(&OracleTransform::InvertColors, &x).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn invert_is_an_involution(seed in 0u64..10_000) {
            let x = sample(seed);
            let twice = apply_oracle(&OracleTransform::InvertColors, &apply_oracle(&OracleTransform::InvertColors, &x).unwrap()).unwrap();
            prop_assert_eq!(twice, x);
        }

        #[test]
        fn outputs_stay_in_range_and_deterministic(seed in 0u64..10_000, strength in 0f32..=1.0, levels in 2u32..9) {
            let x = sample(seed);
            let t = OracleTransform::Compose(vec![
                OracleTransform::EdgeSketch { strength },
                OracleTransform::Posterize { levels },
            ]);
            let a = apply_oracle(&t, &x).unwrap();
            prop_assert!(a.in_unit_range());
            prop_assert_eq!(a.shape(), x.shape());
            prop_assert_eq!(a, apply_oracle(&t, &x).unwrap());
        }
    }
}
