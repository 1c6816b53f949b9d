//! Stand-in "real" domain: a fixed photometric transform of rendered plates.
//!
//! Per image, in order: channel-mixing colour remap, a smooth illumination
//! ramp at a random angle, horizontal banding, sparse grime blotches, a
//! sigmoid contrast curve, then mild sensor noise. Geometry is untouched, so
//! labels carry over unchanged.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Salt mixed into the seed so proxy streams never coincide with synthesis
/// streams that use the same user seed.
const SALT: u64 = 0x5eed_0f_4ea1;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainProxy {
    pub seed: u64,
    /// Row-major 3×3 channel mix followed by an offset.
    pub mix: [f64; 9],
    pub offset: [f64; 3],
    pub ramp: f64,
    pub banding: f64,
    pub grime: usize,
    /// Steepness of the contrast sigmoid around 0.5.
    pub contrast: f64,
    pub noise: f64,
}

impl DomainProxy {
    pub fn new(seed: u64) -> Self {
        DomainProxy {
            seed,
            mix: [0.55, 0.30, 0.10, 0.20, 0.60, 0.15, 0.05, 0.35, 0.45],
            offset: [0.12, 0.08, 0.02],
            ramp: 0.35,
            banding: 0.06,
            grime: 3,
            contrast: 7.0,
            noise: 0.03,
        }
    }

    pub fn apply(&self, img: &Tensor, index: u64) -> Result<Tensor> {
        let (h, w) = match *img.shape() {
            [h, w, 3] => (h, w),
            _ => return Err(Error::ShapeMismatch(format!("proxy needs [H,W,3], got {:?}", img.shape()))),
        };
        let mut rng = Rng::derive(self.seed ^ SALT, index);
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let (dx, dy) = (angle.cos(), angle.sin());
        let strength = self.ramp * rng.uniform(0.5, 1.0);
        let period = rng.uniform(2.5, 4.5);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let blotches: Vec<(f64, f64, f64, f64)> = (0..self.grime)
            .map(|_| {
                (
                    rng.uniform(0.0, w as f64),
                    rng.uniform(0.0, h as f64),
                    rng.uniform(1.0, h as f64 / 3.0),
                    rng.uniform(0.2, 0.45),
                )
            })
            .collect();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let scale = (cx * cx + cy * cy).sqrt().max(1.0);
        let lo = 1.0 / (1.0 + (self.contrast * 0.5).exp());
        let hi = 1.0 / (1.0 + (-self.contrast * 0.5).exp());

        let src = img.data();
        let mut out = Vec::with_capacity(src.len());
        for y in 0..h {
            for x in 0..w {
                let p = &src[(y * w + x) * 3..(y * w + x) * 3 + 3];
                let along = ((x as f64 - cx) * dx + (y as f64 - cy) * dy) / scale;
                let mut light = 1.0 + strength * along;
                light *= 1.0 - self.banding * (0.5 + 0.5 * (y as f64 * std::f64::consts::TAU / period + phase).sin());
                let mut dirt = 0.0;
                for &(bx, by, r, a) in &blotches {
                    let d2 = ((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)) / (r * r);
                    dirt += a * (-d2).exp();
                }
                for c in 0..3 {
                    let m = &self.mix[c * 3..c * 3 + 3];
                    let v = m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + self.offset[c];
                    let v = v * light * (1.0 - dirt.min(0.8));
                    let s = 1.0 / (1.0 + (-self.contrast * (v - 0.5)).exp());
                    let v = (s - lo) / (hi - lo) + rng.gaussian(0.0, self.noise);
                    out.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Tensor::from_vec(img.shape(), out)
    }

    /// Applies the transform to `images[i]` with stream index `first + i`.
    pub fn apply_all(&self, images: &[Tensor], first: u64) -> Result<Vec<Tensor>> {
        images
            .iter()
            .enumerate()
            .map(|(i, t)| self.apply(t, first + i as u64))
            .collect()
    }
}
