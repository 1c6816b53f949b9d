//! Affine warp, directional motion blur and additive Gaussian noise, applied
//! in that order to `[H, W, C]` images.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    pub noise_sigma: f64,
    /// Box-filter length in pixels; 1 disables blurring.
    pub blur_len: usize,
    /// Blur direction in radians, 0 = horizontal.
    pub blur_angle: f64,
    /// Forward map `[a, b, tx, c, d, ty]` about the image centre:
    /// `dst = [[a, b], [c, d]]·(src − centre) + centre + t`.
    pub affine: [f64; 6],
}

impl AugmentSpec {
    pub fn identity() -> Self {
        AugmentSpec {
            noise_sigma: 0.0,
            blur_len: 1,
            blur_angle: 0.0,
            affine: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    /// Rotation within ±5°, shear within ±0.1, scale 0.9–1.1, shift within
    /// ±W/64 and ±H/32, blur length 1–3 at any angle, noise σ up to 0.04.
    pub fn sample(rng: &mut Rng, height: usize, width: usize) -> Self {
        let rot = rng.uniform(-5.0, 5.0).to_radians();
        let shear = rng.uniform(-0.1, 0.1);
        let scale = rng.uniform(0.9, 1.1);
        let tx = rng.uniform(-1.0, 1.0) * width as f64 / 64.0;
        let ty = rng.uniform(-1.0, 1.0) * height as f64 / 32.0;
        let (s, c) = rot.sin_cos();
        // rotation · shear · scale
        let a = scale * c;
        let b = scale * (c * shear - s);
        let cc = scale * s;
        let d = scale * (s * shear + c);
        AugmentSpec {
            noise_sigma: rng.uniform(0.0, 0.04),
            blur_len: 1 + rng.below(3),
            blur_angle: rng.uniform(0.0, std::f64::consts::PI),
            affine: [a, b, tx, cc, d, ty],
        }
    }

    pub fn describe(&self) -> String {
        let m = self.affine;
        format!(
            "sigma={:.4} blur={}@{:.3} affine={:.4},{:.4},{:.3},{:.4},{:.4},{:.3}",
            self.noise_sigma, self.blur_len, self.blur_angle, m[0], m[1], m[2], m[3], m[4], m[5]
        )
    }
}

fn dims(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::ShapeMismatch(format!("image must be [H,W,C], got {:?}", img.shape()))),
    }
}

/// Bilinear sample with border replication.
pub(crate) fn bilinear(d: &[f64], h: usize, w: usize, c: usize, x: f64, y: f64, out: &mut [f64]) {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    for ch in 0..c {
        let v00 = d[(y0 * w + x0) * c + ch];
        let v01 = d[(y0 * w + x1) * c + ch];
        let v10 = d[(y1 * w + x0) * c + ch];
        let v11 = d[(y1 * w + x1) * c + ch];
        out[ch] = if fx == 0.0 && fy == 0.0 {
            v00
        } else {
            (v00 * (1.0 - fx) + v01 * fx) * (1.0 - fy) + (v10 * (1.0 - fx) + v11 * fx) * fy
        };
    }
}

/// Bilinear resize with corner alignment.
pub fn resize(img: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w, c) = dims(img)?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape {
            shape: vec![height, width],
            reason: "cannot resize to an empty image".into(),
        });
    }
    let sy = if height > 1 { (h - 1) as f64 / (height - 1) as f64 } else { 0.0 };
    let sx = if width > 1 { (w - 1) as f64 / (width - 1) as f64 } else { 0.0 };
    let mut out = vec![0.0; height * width * c];
    for y in 0..height {
        for x in 0..width {
            let o = (y * width + x) * c;
            bilinear(img.data(), h, w, c, x as f64 * sx, y as f64 * sy, &mut out[o..o + c]);
        }
    }
    Tensor::from_vec(&[height, width, c], out)
}

pub fn warp_affine(img: &Tensor, m: [f64; 6]) -> Result<Tensor> {
    let (h, w, c) = dims(img)?;
    let det = m[0] * m[4] - m[1] * m[3];
    if !det.is_finite() || det.abs() < 1e-9 {
        return Err(Error::InvalidTransform(format!("affine matrix is singular (det {det})")));
    }
    let inv = [m[4] / det, -m[1] / det, -m[3] / det, m[0] / det];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let d = img.data();
    let mut out = vec![0.0; d.len()];
    for y in 0..h {
        for x in 0..w {
            let u = x as f64 - cx - m[2];
            let v = y as f64 - cy - m[5];
            let sx = inv[0] * u + inv[1] * v + cx;
            let sy = inv[2] * u + inv[3] * v + cy;
            let o = (y * w + x) * c;
            bilinear(d, h, w, c, sx, sy, &mut out[o..o + c]);
        }
    }
    Tensor::from_vec(img.shape(), out)
}

pub fn motion_blur(img: &Tensor, len: usize, angle: f64) -> Result<Tensor> {
    let (h, w, c) = dims(img)?;
    if len == 0 {
        return Err(Error::InvalidArgument("blur length must be at least 1".into()));
    }
    if len == 1 {
        return Ok(img.clone());
    }
    let (s, co) = angle.sin_cos();
    let d = img.data();
    let mut out = vec![0.0; d.len()];
    let mut px = vec![0.0; c];
    let half = (len as f64 - 1.0) / 2.0;
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * c;
            for k in 0..len {
                let t = k as f64 - half;
                bilinear(d, h, w, c, x as f64 + t * co, y as f64 + t * s, &mut px);
                for ch in 0..c {
                    out[o + ch] += px[ch] / len as f64;
                }
            }
        }
    }
    Tensor::from_vec(img.shape(), out)
}

pub fn augment(img: &Tensor, spec: &AugmentSpec, rng: &mut Rng) -> Result<Tensor> {
    let warped = warp_affine(img, spec.affine)?;
    let blurred = motion_blur(&warped, spec.blur_len, spec.blur_angle)?;
    let sigma = spec.noise_sigma;
    let mut out = blurred;
    if sigma > 0.0 {
        for v in out.data_mut() {
            *v += rng.gaussian(0.0, sigma);
        }
    }
    Ok(out.map(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dist;

    fn test_image(rng: &mut Rng) -> Tensor {
        Tensor::random(&[12, 20, 3], Dist::Uniform { low: 0.0, high: 1.0 }, rng).unwrap()
    }

    #[test]
    fn identity_leaves_image_unchanged() {
        let mut rng = Rng::new(1);
        let img = test_image(&mut rng);
        let out = augment(&img, &AugmentSpec::identity(), &mut rng).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let img = test_image(&mut Rng::new(1));
        let spec = AugmentSpec {
            noise_sigma: 0.1,
            ..AugmentSpec::identity()
        };
        let a = augment(&img, &spec, &mut Rng::new(5)).unwrap();
        let b = augment(&img, &spec, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, img);
    }

    #[test]
    fn horizontal_blur_softens_vertical_edge() {
        let (h, w) = (8, 16);
        let mut img = Tensor::zeros(&[h, w, 1]);
        for y in 0..h {
            for x in w / 2..w {
                img.data_mut()[y * w + x] = 1.0;
            }
        }
        // Mean squared horizontal gradient; total variation of a single
        // monotone edge is unchanged by a box blur, its square is not.
        let energy = |t: &Tensor| {
            let mut e = 0.0;
            for y in 0..h {
                for x in 1..w {
                    e += (t.data()[y * w + x] - t.data()[y * w + x - 1]).powi(2);
                }
            }
            e / (h * (w - 1)) as f64
        };
        let blurred = motion_blur(&img, 5, 0.0).unwrap();
        assert!(energy(&blurred) < energy(&img));
    }

    #[test]
    fn singular_affine_is_rejected() {
        let img = test_image(&mut Rng::new(2));
        let spec = AugmentSpec {
            affine: [1.0, 2.0, 0.0, 0.5, 1.0, 0.0],
            ..AugmentSpec::identity()
        };
        assert!(matches!(augment(&img, &spec, &mut Rng::new(0)), Err(Error::InvalidTransform(_))));
    }

    #[test]
    fn sampled_augmentations_stay_in_range() {
        let img = test_image(&mut Rng::new(3));
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let spec = AugmentSpec::sample(&mut rng, 12, 20);
            let out = augment(&img, &spec, &mut rng).unwrap();
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
