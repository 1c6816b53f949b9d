//! DCGAN for unlabeled plate-like samples.
//!
//! Generator: 100-d uniform(−1, 1) latent → linear projection → reshape to
//! `[H/16, W/16, start]` → four (2× nearest upsample + 5×5 conv) stages, the
//! last one emitting image channels through a sigmoid. Discriminator: four
//! stride-2 5×5 convs with leaky ReLU, flatten, linear score. Trained with the
//! logistic loss, non-saturating on the generator side.

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv2d, Layer, Linear, Mode, Sequential};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{Rng, Tensor};

pub const LATENT_DIM: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct DcganConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Channels of the projected map; halved after the second stage.
    pub start: usize,
    pub critic_base: usize,
    pub batch: usize,
    pub opt: OptimizerKind,
}

impl DcganConfig {
    pub fn toy(height: usize, width: usize) -> Self {
        DcganConfig {
            height,
            width,
            channels: 3,
            start: 16,
            critic_base: 4,
            batch: 8,
            opt: OptimizerKind::adam_gan(),
        }
    }

    /// 64×64×3 output from a 4×4×16 projection.
    pub fn paper() -> Self {
        DcganConfig {
            critic_base: 64,
            batch: 64,
            ..DcganConfig::toy(64, 64)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dcgan {
    pub cfg: DcganConfig,
    pub g: Sequential,
    pub d: Sequential,
}

fn conv5(m: usize, n: usize, stride: usize, rng: &mut Rng) -> Layer {
    Layer::Conv2d(Conv2d::new((5, 5), m, n, (stride, stride), (2, 2), rng))
}

pub fn build_dcgan(cfg: &DcganConfig, rng: &mut Rng) -> Result<Dcgan> {
    if cfg.height % 16 != 0 || cfg.width % 16 != 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::InvalidShape {
            shape: vec![cfg.height, cfg.width],
            reason: "DCGAN geometry must be divisible by 16".into(),
        });
    }
    if cfg.batch < 2 || cfg.start < 4 {
        return Err(Error::config("dcgan", "batch must be at least 2 and start at least 4 channels"));
    }
    let (h0, w0) = (cfg.height / 16, cfg.width / 16);
    let widths = [cfg.start, cfg.start, cfg.start / 2, cfg.start / 4];
    let mut g = vec![
        Layer::Linear(Linear::new(LATENT_DIM, h0 * w0 * cfg.start, rng)),
        Layer::Reshape([h0, w0, cfg.start]),
        Layer::BatchNorm(BatchNorm::new(cfg.start)),
        Layer::Relu,
    ];
    for k in 0..4 {
        g.push(Layer::Upsample(2));
        if k < 3 {
            g.push(conv5(widths[k], widths[k + 1], 1, rng));
            g.push(Layer::BatchNorm(BatchNorm::new(widths[k + 1])));
            g.push(Layer::Relu);
        } else {
            g.push(conv5(widths[k], cfg.channels, 1, rng));
            g.push(Layer::Sigmoid);
        }
    }
    let b = cfg.critic_base;
    let mut d = Vec::new();
    let mut m = cfg.channels;
    for n in [b, 2 * b, 4 * b, 8 * b] {
        d.push(conv5(m, n, 2, rng));
        d.push(Layer::LeakyRelu(0.2));
        m = n;
    }
    d.push(Layer::Flatten);
    d.push(Layer::Linear(Linear::new(h0 * w0 * 8 * b, 1, rng)));
    Ok(Dcgan {
        cfg: cfg.clone(),
        g: Sequential::new(g),
        d: Sequential::new(d),
    })
}

/// `[n, 100]` with entries uniform in [−1, 1].
pub fn latent(n: usize, rng: &mut Rng) -> Tensor {
    let data = (0..n * LATENT_DIM).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::from_vec(&[n, LATENT_DIM], data).expect("latent shape")
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean of `softplus(−sign·s)` and its gradient: sign +1 pushes scores up.
fn logistic(scores: &Tensor, sign: f64) -> (f64, Tensor) {
    let n = scores.len() as f64;
    let v = scores.data().iter().map(|&s| softplus(-sign * s)).sum::<f64>() / n;
    let g = scores.map(|s| -sign * crate::tensor::sigmoid(-sign * s) / n);
    (v, g)
}

/// Per-step `(discriminator loss, generator loss)`.
pub fn train_dcgan(net: &mut Dcgan, images: &[Tensor], epochs: usize, rng: &mut Rng) -> Result<Vec<(f64, f64)>> {
    let cfg = net.cfg.clone();
    if images.len() < cfg.batch {
        return Err(Error::Data(format!("DCGAN needs at least {} images, got {}", cfg.batch, images.len())));
    }
    let mut opt_g = Optimizer::new(cfg.opt);
    let mut opt_d = Optimizer::new(cfg.opt);
    opt_g.init(&net.g.params());
    opt_d.init(&net.d.params());
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut log = Vec::new();
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks_exact(cfg.batch) {
            let real: Vec<Tensor> = chunk.iter().map(|&i| images[i].clone()).collect();
            let real = Tensor::stack(&real)?;
            let fake = net.g.forward(&latent(cfg.batch, rng), Mode::Train)?.output;

            let tr = net.d.forward(&real, Mode::Train)?;
            let tf = net.d.forward(&fake, Mode::Train)?;
            let (lr, gr) = logistic(&tr.output, 1.0);
            let (lf, gf) = logistic(&tf.output, -1.0);
            let (_, mut grads) = net.d.backward(&tr, &gr, false)?;
            let (_, more) = net.d.backward(&tf, &gf, false)?;
            for (a, m) in grads.iter_mut().zip(&more) {
                a.add_scaled(m, 1.0)?;
            }
            opt_d.step(net.d.params_mut(), &grads)?;

            let tg = net.g.forward(&latent(cfg.batch, rng), Mode::Train)?;
            let td = net.d.forward(&tg.output, Mode::Train)?;
            let (lg, gg) = logistic(&td.output, 1.0);
            let dx = net.d.backward(&td, &gg, true)?.0.expect("dx requested");
            let (_, grads) = net.g.backward(&tg, &dx, false)?;
            opt_g.step(net.g.params_mut(), &grads)?;
            net.g.commit(&tg);

            let ld = lr + lf;
            if !(ld.is_finite() && lg.is_finite()) {
                return Err(Error::Divergence(format!("DCGAN losses d={ld} g={lg} at step {}", log.len())));
            }
            log.push((ld, lg));
        }
    }
    Ok(log)
}

/// `n` unlabeled `[H, W, C]` samples.
pub fn sample_dcgan(net: &Dcgan, n: usize, rng: &mut Rng) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(n);
    let mut left = n;
    while left > 0 {
        let k = left.min(32);
        out.extend(net.g.infer(&latent(k, rng))?.unstack());
        left -= k;
    }
    Ok(out)
}
