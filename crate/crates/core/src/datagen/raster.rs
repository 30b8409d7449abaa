use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{quantize8, Image};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    Solid,
    Gradient,
}

/// Parameters of the procedural source domain: a background plus a few
/// flat-coloured ellipses and convex polygons.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub resolution: usize,
    pub num_shapes: usize,
    pub palette_seed: u64,
    pub background_mode: BackgroundMode,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { resolution: 32, num_shapes: 3, palette_seed: 0, background_mode: BackgroundMode::Gradient }
    }
}

const PALETTE_SIZE: usize = 8;
const SUPERSAMPLE: usize = 4;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 || !self.resolution.is_power_of_two() {
            return Err(Error::config(format!(
                "resolution must be a power of two >= 16, got {}",
                self.resolution
            )));
        }
        if !(2..=5).contains(&self.num_shapes) {
            return Err(Error::config(format!("num_shapes must be in 2..=5, got {}", self.num_shapes)));
        }
        Ok(())
    }

    pub fn palette(&self) -> Vec<[f32; 3]> {
        let mut rng = rng::stream(rng::derive(self.palette_seed, "palette"), 0);
        (0..PALETTE_SIZE)
            .map(|_| [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)])
            .collect()
    }
}

enum Shape {
    Ellipse { cx: f32, cy: f32, a: f32, b: f32, cos: f32, sin: f32 },
    Polygon { verts: Vec<(f32, f32)> },
}

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match self {
            Shape::Ellipse { cx, cy, a, b, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Polygon { verts } => {
                let mut inside = false;
                let n = verts.len();
                for i in 0..n {
                    let (xi, yi) = verts[i];
                    let (xj, yj) = verts[(i + n - 1) % n];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}

fn random_shape(rng: &mut impl Rng, res: f32) -> Shape {
    let cx = rng.random_range(0.15..0.85) * res;
    let cy = rng.random_range(0.15..0.85) * res;
    let r = rng.random_range(0.12..0.3) * res;
    if rng.random_bool(0.5) {
        let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
        Shape::Ellipse { cx, cy, a: r, b: r * rng.random_range(0.45..1.0), cos: theta.cos(), sin: theta.sin() }
    } else {
        let k = rng.random_range(3..=5);
        let start: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let verts = (0..k)
            .map(|i| {
                let ang = start + std::f32::consts::TAU * (i as f32 + rng.random_range(-0.2..0.2)) / k as f32;
                let rr = r * rng.random_range(0.75..1.1);
                (cx + rr * ang.cos(), cy + rr * ang.sin())
            })
            .collect();
        Shape::Polygon { verts }
    }
}

/// Render one source-domain image. Identical `(spec, seed)` gives a
/// bit-identical image.
pub fn generate_source_image(spec: &SyntheticSpec, seed: u64) -> Result<Image> {
    spec.validate()?;
    let palette = spec.palette();
    let res = spec.resolution;
    let mut rng = rng::stream(rng::derive(seed, "source-image"), 0);

    let c0 = palette[rng.random_range(0..PALETTE_SIZE)];
    let c1 = palette[rng.random_range(0..PALETTE_SIZE)];
    let dir: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (dir.cos(), dir.sin());
    let mut canvas = vec![[0f32; 3]; res * res];
    for y in 0..res {
        for x in 0..res {
            let col = match spec.background_mode {
                BackgroundMode::Solid => c0,
                BackgroundMode::Gradient => {
                    let u = ((x as f32 + 0.5) / res as f32 - 0.5) * dx + ((y as f32 + 0.5) / res as f32 - 0.5) * dy;
                    let t = (u + 0.5).clamp(0.0, 1.0);
                    [0, 1, 2].map(|c| c0[c] * (1.0 - t) + c1[c] * t)
                }
            };
            canvas[y * res + x] = col;
        }
    }

    for _ in 0..spec.num_shapes {
        let shape = random_shape(&mut rng, res as f32);
        let color = palette[rng.random_range(0..PALETTE_SIZE)];
        for y in 0..res {
            for x in 0..res {
                let mut hits = 0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32;
                        let py = y as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32;
                        hits += shape.contains(px, py) as usize;
                    }
                }
                if hits > 0 {
                    let a = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
                    let px = &mut canvas[y * res + x];
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - a) + color[c] * a;
                    }
                }
            }
        }
    }

    let mut data = vec![0f32; 3 * res * res];
    for (i, px) in canvas.iter().enumerate() {
        for c in 0..3 {
            data[c * res * res + i] = quantize8(px[c]);
        }
    }
    Ok(Image::new(3, res, res, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = SyntheticSpec::default();
        let a = generate_source_image(&spec, 7).unwrap();
        assert_eq!(a, generate_source_image(&spec, 7).unwrap());
        let b = generate_source_image(&spec, 8).unwrap();
        assert!(a.data.iter().zip(&b.data).any(|(x, y)| x != y));
        assert_eq!(a.shape(), (3, 32, 32));
        assert!(a.in_unit_range());
    }

    #[test]
    fn invalid_resolution_rejected() {
        for res in [17, 8, 0, 48] {
            let spec = SyntheticSpec { resolution: res, ..Default::default() };
            assert!(matches!(generate_source_image(&spec, 0), Err(Error::Config(_))), "{res}");
        }
        let spec = SyntheticSpec { num_shapes: 6, ..Default::default() };
        assert!(generate_source_image(&spec, 0).is_err());
    }

    #[test]
    fn solid_background_corners_share_colour_without_shapes_nearby() {
        let spec = SyntheticSpec { background_mode: BackgroundMode::Solid, ..Default::default() };
        let img = generate_source_image(&spec, 3).unwrap();
        let palette: Vec<[f32; 3]> = spec.palette();
        // pixel values must be reachable from palette colours blended together
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(palette.len(), PALETTE_SIZE);
    }
}
