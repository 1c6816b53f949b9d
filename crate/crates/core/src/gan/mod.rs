//! Unpaired image translation between a synthetic domain S and a real domain
//! R: cycle generators, patch critics, least-squares and Wasserstein
//! objectives, the training schedule, and a DCGAN for unlabeled samples.

pub mod dcgan;
pub mod loss;
pub mod train;

pub use dcgan::{build_dcgan, sample_dcgan, train_dcgan, Dcgan, DcganConfig, LATENT_DIM};
pub use loss::{
    clip_params, critic_objective, cycle_loss, l1_loss, lsgan_loss, total_objective, wgan_loss, AdvLoss, Side,
};
pub use train::{
    jitter, read_history, train_cyclegan, translate, translate_ensemble, translate_split, write_history, LossRecord,
    Phase, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::layers::{Conv2d, Layer, Sequential};
use crate::optim::OptimizerKind;
use crate::tensor::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanVariant {
    Lsgan,
    Wgan,
}

impl GanVariant {
    pub fn name(self) -> &'static str {
        match self {
            GanVariant::Lsgan => "lsgan",
            GanVariant::Wgan => "wgan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lsgan" => Some(GanVariant::Lsgan),
            "wgan" => Some(GanVariant::Wgan),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub variant: GanVariant,
    /// Cycle-consistency weight.
    pub lambda: f64,
    /// Optional identity term `identity·lambda·(|G(r) − r| + |F(s) − s|)`;
    /// 0 leaves the objective as adversarial plus cycle.
    pub identity: f64,
    /// Critic updates per generator update (forced to 1 for lsgan).
    pub d_iter: usize,
    /// Critic parameter bound for wgan.
    pub clip_c: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Width of the first generator stage; later stages double it.
    pub base: usize,
    pub critic_base: usize,
    pub resblocks: usize,
    pub batch: usize,
    pub gen_opt: OptimizerKind,
    pub critic_opt: OptimizerKind,
    /// Random upscale-and-crop by 9/8 of training images.
    pub jitter: bool,
    /// Random horizontal flip on top of the jitter.
    pub flip: bool,
}

impl GanConfig {
    /// 32×32, two residual blocks, RMSProp, d_iter 5, clip 0.01.
    pub fn toy(variant: GanVariant) -> Self {
        let (gen_opt, critic_opt) = match variant {
            GanVariant::Wgan => (OptimizerKind::rmsprop(5e-4), OptimizerKind::rmsprop(5e-4)),
            GanVariant::Lsgan => (OptimizerKind::adam_gan(), OptimizerKind::adam_gan()),
        };
        GanConfig {
            variant,
            lambda: 10.0,
            identity: 0.0,
            d_iter: if variant == GanVariant::Wgan { 5 } else { 1 },
            clip_c: 0.01,
            height: 32,
            width: 32,
            channels: 3,
            base: 8,
            critic_base: 8,
            resblocks: 2,
            batch: 8,
            gen_opt,
            critic_opt,
            jitter: true,
            flip: true,
        }
    }

    /// 128×128 with six residual blocks and 64 base channels.
    pub fn paper(variant: GanVariant) -> Self {
        GanConfig {
            height: 128,
            width: 128,
            base: 64,
            critic_base: 64,
            resblocks: 6,
            batch: 1,
            ..GanConfig::toy(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Err(Error::config(key, reason));
        if !(self.lambda > 0.0) {
            return bad("gan.lambda", format!("must be positive, got {}", self.lambda));
        }
        if !(self.identity >= 0.0) {
            return bad("gan.identity", format!("must be non-negative, got {}", self.identity));
        }
        if self.d_iter == 0 {
            return bad("gan.d_iter", "must be at least 1".into());
        }
        if self.variant == GanVariant::Wgan && !(self.clip_c > 0.0) {
            return bad("gan.clip", format!("must be positive, got {}", self.clip_c));
        }
        if self.batch == 0 {
            return bad("gan.batch", "must be at least 1".into());
        }
        if self.base == 0 || self.critic_base == 0 || self.channels == 0 {
            return bad("gan.base", "channel counts must be positive".into());
        }
        Ok(())
    }

    pub fn critic_steps(&self) -> usize {
        match self.variant {
            GanVariant::Wgan => self.d_iter,
            GanVariant::Lsgan => 1,
        }
    }
}

fn conv(k: usize, m: usize, n: usize, stride: usize, rng: &mut Rng) -> Layer {
    Layer::Conv2d(Conv2d::new((k, k), m, n, (stride, stride), (k / 2, k / 2), rng))
}

const IN_EPS: f64 = 1e-5;

fn conv_in_relu(layers: &mut Vec<Layer>, k: usize, m: usize, n: usize, stride: usize, rng: &mut Rng) {
    layers.push(conv(k, m, n, stride, rng));
    layers.push(Layer::InstanceNorm(IN_EPS));
    layers.push(Layer::Relu);
}

/// 3×3 conv → two stride-2 convs → residual blocks → two (2× nearest
/// upsample + 3×3 conv) → 3×3 conv → sigmoid. Every hidden conv is followed
/// by instance normalization and ReLU, so a translation does not depend on
/// the rest of the batch.
pub fn build_cycle_generator(cfg: &GanConfig, rng: &mut Rng) -> Result<Sequential> {
    if cfg.height % 4 != 0 || cfg.width % 4 != 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::InvalidShape {
            shape: vec![cfg.height, cfg.width],
            reason: "generator geometry must be divisible by 4".into(),
        });
    }
    let (c, b) = (cfg.channels, cfg.base);
    let mut l = Vec::new();
    conv_in_relu(&mut l, 3, c, b, 1, rng);
    conv_in_relu(&mut l, 3, b, 2 * b, 2, rng);
    conv_in_relu(&mut l, 3, 2 * b, 4 * b, 2, rng);
    for _ in 0..cfg.resblocks {
        let body = vec![
            conv(3, 4 * b, 4 * b, 1, rng),
            Layer::InstanceNorm(IN_EPS),
            Layer::Relu,
            conv(3, 4 * b, 4 * b, 1, rng),
            Layer::InstanceNorm(IN_EPS),
        ];
        l.push(Layer::Residual(Sequential::new(body)));
    }
    l.push(Layer::Upsample(2));
    conv_in_relu(&mut l, 3, 4 * b, 2 * b, 1, rng);
    l.push(Layer::Upsample(2));
    conv_in_relu(&mut l, 3, 2 * b, b, 1, rng);
    l.push(conv(3, b, c, 1, rng));
    l.push(Layer::Sigmoid);
    Ok(Sequential::new(l))
}

/// Receptive field of one critic score cell in input pixels.
pub fn critic_receptive_field() -> usize {
    // k3 s1 <- k3 s2 <- k3 s2
    let mut r = 1;
    for (k, s) in [(3, 1), (3, 2), (3, 2)] {
        r = (r - 1) * s + k;
    }
    r
}

/// Two stride-2 3×3 convs with leaky ReLU, the second instance-normalized,
/// then a 3×3 conv to one score channel: a `[H/4, W/4]` grid of scores, each
/// seeing a 15×15 patch. The normalization has no parameters, so clipping
/// still covers every weight.
pub fn build_patch_discriminator(cfg: &GanConfig, rng: &mut Rng) -> Result<Sequential> {
    let rf = critic_receptive_field();
    if cfg.height < rf || cfg.width < rf {
        return Err(Error::InvalidShape {
            shape: vec![cfg.height, cfg.width],
            reason: format!("critic needs at least {rf}x{rf} input"),
        });
    }
    let (c, b) = (cfg.channels, cfg.critic_base);
    Ok(Sequential::new(vec![
        conv(3, c, b, 2, rng),
        Layer::LeakyRelu(0.2),
        conv(3, b, 2 * b, 2, rng),
        Layer::InstanceNorm(IN_EPS),
        Layer::LeakyRelu(0.2),
        conv(3, 2 * b, 1, 1, rng),
    ]))
}

/// `g: S → R`, `f: R → S` and one critic per domain.
#[derive(Clone, Debug)]
pub struct CycleModels {
    pub g: Sequential,
    pub f: Sequential,
    pub d_s: Sequential,
    pub d_r: Sequential,
}

impl CycleModels {
    pub fn new(cfg: &GanConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(CycleModels {
            g: build_cycle_generator(cfg, rng)?,
            f: build_cycle_generator(cfg, rng)?,
            d_s: build_patch_discriminator(cfg, rng)?,
            d_r: build_patch_discriminator(cfg, rng)?,
        })
    }

    /// Largest absolute critic parameter over both critics.
    pub fn critic_absmax(&self) -> f64 {
        self.d_s
            .params()
            .into_iter()
            .chain(self.d_r.params())
            .map(|p| p.max_abs())
            .fold(0.0, f64::max)
    }
}
