use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Batch normalization over the last axis.
///
/// Statistics are taken over every leading position (batch and spatial).
/// Running estimates follow `running = momentum·running + (1−momentum)·batch`
/// with the biased batch variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::fill(&[channels], 1.0).expect("channels"),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::fill(&[channels], 1.0).expect("channels"),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
        let c = self.channels();
        if x.rank() < 2 || *x.shape().last().unwrap() != c {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm over {c} channels got {:?}",
                x.shape()
            )));
        }
        if mode == Mode::Train && x.shape()[0] < 2 {
            return Err(Error::DegenerateBatch(
                "batch statistics need at least 2 samples".into(),
            ));
        }
        let rows = x.len() / c;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                for row in x.data().chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; c];
                for row in x.data().chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                (mean, var)
            }
            Mode::Infer => (self.running_mean.data().to_vec(), self.running_var.data().to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let (g, b) = (self.gamma.data(), self.beta.data());
        for (r, row) in x.data().chunks(c).enumerate() {
            for ch in 0..c {
                let xh = (row[ch] - mean[ch]) * inv_std[ch];
                xhat[r * c + ch] = xh;
                out[r * c + ch] = g[ch] * xh + b[ch];
            }
        }
        Ok((
            Tensor::from_vec(x.shape(), out)?,
            BnCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                mode,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode pass into the running estimates.
    pub fn commit(&mut self, cache: &BnCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    /// Returns `(grad_input, [grad_gamma, grad_beta])`.
    pub fn backward(&self, cache: &BnCache, gout: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let c = self.channels();
        if gout.len() != cache.xhat.len() {
            return Err(Error::ShapeMismatch("batchnorm backward: gradient/cache size".into()));
        }
        let rows = gout.len() / c;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (r, g) in gout.data().chunks(c).enumerate() {
            for ch in 0..c {
                dgamma[ch] += g[ch] * cache.xhat[r * c + ch];
                dbeta[ch] += g[ch];
            }
        }
        let gamma = self.gamma.data();
        let mut dx = vec![0.0; gout.len()];
        match cache.mode {
            Mode::Train => {
                let n = rows as f64;
                for (r, g) in gout.data().chunks(c).enumerate() {
                    for ch in 0..c {
                        let k = gamma[ch] * cache.inv_std[ch] / n;
                        dx[r * c + ch] = k * (n * g[ch] - dbeta[ch] - cache.xhat[r * c + ch] * dgamma[ch]);
                    }
                }
            }
            Mode::Infer => {
                for (r, g) in gout.data().chunks(c).enumerate() {
                    for ch in 0..c {
                        dx[r * c + ch] = g[ch] * gamma[ch] * cache.inv_std[ch];
                    }
                }
            }
        }
        Ok((
            Tensor::from_vec(gout.shape(), dx)?,
            vec![Tensor::from_vec(&[c], dgamma)?, Tensor::from_vec(&[c], dbeta)?],
        ))
    }
}

/// Runs a forward pass and, in train mode, updates the running statistics.
pub fn batchnorm_forward(bn: &mut BatchNorm, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
    let (y, cache) = bn.forward(x, mode)?;
    bn.commit(&cache);
    Ok((y, cache))
}

/// Per-sample, per-channel normalization over the spatial axes of
/// `[B, H, W, C]` (or one `[H, W, C]` image), with no learned scale or shift.
pub fn instance_norm_forward(x: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    let (b, hw, c) = match *x.shape() {
        [b, h, w, c] => (b, h * w, c),
        [h, w, c] => (1, h * w, c),
        _ => return Err(Error::ShapeMismatch(format!("instance norm expects [B,H,W,C], got {:?}", x.shape()))),
    };
    let xd = x.data();
    let mut y = vec![0.0; xd.len()];
    let mut inv = vec![0.0; b * c];
    for s in 0..b {
        let base = s * hw * c;
        for ch in 0..c {
            let at = |i: usize| base + i * c + ch;
            let mean = (0..hw).map(|i| xd[at(i)]).sum::<f64>() / hw as f64;
            let var = (0..hw).map(|i| (xd[at(i)] - mean).powi(2)).sum::<f64>() / hw as f64;
            let is = 1.0 / (var + eps).sqrt();
            for i in 0..hw {
                y[at(i)] = (xd[at(i)] - mean) * is;
            }
            inv[s * c + ch] = is;
        }
    }
    Ok((Tensor::from_vec(x.shape(), y)?, inv))
}

/// Gradient of [`instance_norm_forward`] given its output `y` and the saved
/// inverse deviations.
pub fn instance_norm_backward(y: &Tensor, inv: &[f64], gout: &Tensor) -> Result<Tensor> {
    if gout.shape() != y.shape() {
        return Err(Error::ShapeMismatch("instance norm backward: gradient shape".into()));
    }
    let (b, hw, c) = match *y.shape() {
        [b, h, w, c] => (b, h * w, c),
        [h, w, c] => (1, h * w, c),
        _ => return Err(Error::ShapeMismatch("instance norm backward: rank".into())),
    };
    let (yd, g) = (y.data(), gout.data());
    let mut dx = vec![0.0; yd.len()];
    let n = hw as f64;
    for s in 0..b {
        let base = s * hw * c;
        for ch in 0..c {
            let at = |i: usize| base + i * c + ch;
            let sg = (0..hw).map(|i| g[at(i)]).sum::<f64>();
            let sgy = (0..hw).map(|i| g[at(i)] * yd[at(i)]).sum::<f64>();
            let is = inv[s * c + ch];
            for i in 0..hw {
                dx[at(i)] = is / n * (n * g[at(i)] - sg - yd[at(i)] * sgy);
            }
        }
    }
    Tensor::from_vec(y.shape(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Dist, Rng};

    #[test]
    fn instance_norm_standardizes_each_sample() {
        let mut rng = Rng::new(8);
        let x = Tensor::random(&[2, 3, 4, 2], Dist::Gaussian { mean: 2.0, std: 3.0 }, &mut rng).unwrap();
        let (y, _) = instance_norm_forward(&x, 1e-5).unwrap();
        for s in 0..2 {
            for ch in 0..2 {
                let v: Vec<f64> = (0..12).map(|i| y.data()[s * 24 + i * 2 + ch]).collect();
                let mean = v.iter().sum::<f64>() / 12.0;
                let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 12.0;
                assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-5, "{mean} {var}");
            }
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut bn = BatchNorm::new(2);
        bn.beta = Tensor::from_vec(&[2], vec![0.5, -0.25]).unwrap();
        let mut x = Tensor::zeros(&[3, 2, 2, 2]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = if i % 2 == 0 { 4.0 } else { i as f64 };
        }
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for row in y.data().chunks(2) {
            assert!((row[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_standardizes() {
        let mut rng = Rng::new(3);
        let x = Tensor::random(&[8, 3, 3, 4], Dist::Gaussian { mean: 2.0, std: 5.0 }, &mut rng).unwrap();
        let bn = BatchNorm::new(4);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        let rows = y.len() / 4;
        for ch in 0..4 {
            let vals: Vec<f64> = y.data().chunks(4).map(|r| r[ch]).collect();
            let mean = vals.iter().sum::<f64>() / rows as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
    }

    #[test]
    fn infer_mode_with_unit_stats_is_affine() {
        let mut bn = BatchNorm::new(3);
        bn.gamma = Tensor::from_vec(&[3], vec![2.0, 1.0, -1.0]).unwrap();
        bn.beta = Tensor::from_vec(&[3], vec![0.0, 1.0, 0.5]).unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Infer).unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        let want = [2.0 * s, 2.0 * s + 1.0, -3.0 * s + 0.5];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_batch_is_rejected_in_train_mode() {
        let bn = BatchNorm::new(2);
        let x = Tensor::zeros(&[1, 4, 4, 2]);
        assert!(matches!(bn.forward(&x, Mode::Train), Err(Error::DegenerateBatch(_))));
        assert!(bn.forward(&x, Mode::Infer).is_ok());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]).unwrap();
        batchnorm_forward(&mut bn, &x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
    }
}
