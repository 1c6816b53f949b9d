//! Cycle training schedule, loss history and translation.
//!
//! One iteration is `critic_steps()` critic updates, each on a fresh pair of
//! batches, followed by one generator update on another fresh pair. An epoch is
//! `min(|S|, |R|) / batch` iterations. Each domain is read in its own shuffled
//! order, reshuffled whenever it wraps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gan::loss::{l1_loss, lsgan_loss, total_objective, wgan_loss, AdvLoss, Side};
use crate::gan::{clip_params, CycleModels, GanConfig, GanVariant};
use crate::layers::checkpoint::save_sequential;
use crate::layers::{Mode, Sequential};
use crate::optim::Optimizer;
use crate::synth::augment::resize;
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Critic,
    Generator,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Critic => "critic",
            Phase::Generator => "generator",
        }
    }
}

/// One optimizer step. On critic rows `adv_sr`/`adv_rs` are the critic
/// losses of `d_r`/`d_s`; on generator rows they are the generator-side
/// adversarial terms. `critic_absmax` is measured after the step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub phase: Phase,
    pub adv_sr: f64,
    pub adv_rs: f64,
    pub cycle: Option<f64>,
    pub total: Option<f64>,
    pub critic_absmax: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub models: CycleModels,
    pub history: Vec<LossRecord>,
    /// `(g, f)` checkpoint paths, one pair per epoch.
    pub checkpoints: Vec<(PathBuf, PathBuf)>,
}

/// Upscale by 9/8, crop back at a random offset, and flip half the time.
pub fn jitter(img: &Tensor, flip: bool, rng: &mut Rng) -> Result<Tensor> {
    let (h, w, c) = match *img.shape() {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::ShapeMismatch(format!("image must be [H,W,C], got {:?}", img.shape()))),
    };
    let (bh, bw) = ((h * 9).div_ceil(8), (w * 9).div_ceil(8));
    let big = resize(img, bh, bw)?;
    let (oy, ox) = (rng.below(bh - h + 1), rng.below(bw - w + 1));
    let mirror = flip && rng.bernoulli(0.5);
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let sx = if mirror { w - 1 - x } else { x };
            let src = ((oy + y) * bw + ox + sx) * c;
            out[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&big.data()[src..src + c]);
        }
    }
    Tensor::from_vec(&[h, w, c], out)
}

struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

impl Cursor {
    fn new(n: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Cursor { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut Rng) -> Vec<usize> {
        (0..k)
            .map(|_| {
                if self.pos == self.order.len() {
                    rng.shuffle(&mut self.order);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn draw(images: &[Tensor], cursor: &mut Cursor, cfg: &GanConfig, rng: &mut Rng) -> Result<Tensor> {
    let picked = cursor.take(cfg.batch, rng);
    let mut batch = Vec::with_capacity(picked.len());
    for i in picked {
        batch.push(if cfg.jitter {
            jitter(&images[i], cfg.flip, rng)?
        } else {
            images[i].clone()
        });
    }
    Tensor::stack(&batch)
}

fn adversarial(cfg: &GanConfig, real: Option<&Tensor>, fake: &Tensor, side: Side) -> Result<AdvLoss> {
    match cfg.variant {
        GanVariant::Lsgan => lsgan_loss(real, fake, side),
        GanVariant::Wgan => wgan_loss(real, fake, side),
    }
}

fn add_into(acc: &mut [Tensor], more: &[Tensor]) -> Result<()> {
    for (a, m) in acc.iter_mut().zip(more) {
        a.add_scaled(m, 1.0)?;
    }
    Ok(())
}

fn diverged(step: usize, phase: Phase, what: &str, v: f64) -> Error {
    Error::Divergence(format!("{what} became {v} at step {step} ({} phase)", phase.name()))
}

/// One critic update of `d` against real `x` and generated `fake`.
fn critic_update(cfg: &GanConfig, d: &mut Sequential, opt: &mut Optimizer, x: &Tensor, fake: &Tensor) -> Result<f64> {
    let tr = d.forward(x, Mode::Train)?;
    let tf = d.forward(fake, Mode::Train)?;
    let loss = adversarial(cfg, Some(&tr.output), &tf.output, Side::Discriminator)?;
    let gr = loss.grad_real.as_ref().expect("discriminator side has real gradient");
    let (_, mut grads) = d.backward(&tr, gr, false)?;
    let (_, gf) = d.backward(&tf, &loss.grad_fake, false)?;
    add_into(&mut grads, &gf)?;
    opt.step(d.params_mut(), &grads)?;
    if cfg.variant == GanVariant::Wgan {
        clip_params(d, cfg.clip_c);
    }
    Ok(loss.value)
}

struct GenStep {
    adv_sr: f64,
    adv_rs: f64,
    cycle: f64,
}

fn generator_update(
    cfg: &GanConfig,
    m: &mut CycleModels,
    opt_g: &mut Optimizer,
    opt_f: &mut Optimizer,
    s: &Tensor,
    r: &Tensor,
) -> Result<GenStep> {
    let tg1 = m.g.forward(s, Mode::Train)?;
    let tf1 = m.f.forward(&tg1.output, Mode::Train)?;
    let tf2 = m.f.forward(r, Mode::Train)?;
    let tg2 = m.g.forward(&tf2.output, Mode::Train)?;

    let td_r = m.d_r.forward(&tg1.output, Mode::Train)?;
    let adv_sr = adversarial(cfg, None, &td_r.output, Side::Generator)?;
    let td_s = m.d_s.forward(&tf2.output, Mode::Train)?;
    let adv_rs = adversarial(cfg, None, &td_s.output, Side::Generator)?;
    let mut d_fake_r = m.d_r.backward(&td_r, &adv_sr.grad_fake, true)?.0.expect("dx requested");
    let mut d_fake_s = m.d_s.backward(&td_s, &adv_rs.grad_fake, true)?.0.expect("dx requested");

    let (c1, mut g1) = l1_loss(&tf1.output, s)?;
    let (c2, mut g2) = l1_loss(&tg2.output, r)?;
    g1.scale(cfg.lambda);
    g2.scale(cfg.lambda);

    let (dx, mut grads_f) = m.f.backward(&tf1, &g1, true)?;
    d_fake_r.add_scaled(&dx.expect("dx requested"), 1.0)?;
    let (_, mut grads_g) = m.g.backward(&tg1, &d_fake_r, false)?;
    let (dx, gg) = m.g.backward(&tg2, &g2, true)?;
    add_into(&mut grads_g, &gg)?;
    d_fake_s.add_scaled(&dx.expect("dx requested"), 1.0)?;
    let (_, gf) = m.f.backward(&tf2, &d_fake_s, false)?;
    add_into(&mut grads_f, &gf)?;

    if cfg.identity > 0.0 {
        let w = cfg.identity * cfg.lambda;
        for (net, x, grads) in [(&m.g, r, &mut grads_g), (&m.f, s, &mut grads_f)] {
            let t = net.forward(x, Mode::Train)?;
            let (_, mut gi) = l1_loss(&t.output, x)?;
            gi.scale(w);
            add_into(grads, &net.backward(&t, &gi, false)?.1)?;
        }
    }
    opt_g.step(m.g.params_mut(), &grads_g)?;
    opt_f.step(m.f.params_mut(), &grads_f)?;
    m.g.commit(&tg1);
    m.f.commit(&tf2);
    Ok(GenStep {
        adv_sr: adv_sr.value,
        adv_rs: adv_rs.value,
        cycle: c1 + c2,
    })
}

/// Trains fresh cycle models on unpaired `[H, W, C]` image sets. With
/// `checkpoint_dir`, both generators are saved after every epoch as
/// `g_epoch_NNN.ckpt` / `f_epoch_NNN.ckpt`.
pub fn train_cyclegan(
    cfg: &GanConfig,
    domain_s: &[Tensor],
    domain_r: &[Tensor],
    epochs: usize,
    rng: &mut Rng,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if domain_s.is_empty() || domain_r.is_empty() {
        return Err(Error::Data("both domains need at least one image".into()));
    }
    let want = [cfg.height, cfg.width, cfg.channels];
    if let Some(bad) = domain_s.iter().chain(domain_r).find(|t| t.shape() != want) {
        return Err(Error::Data(format!("image of shape {:?} in a {want:?} run", bad.shape())));
    }
    let mut m = CycleModels::new(cfg, rng)?;
    if cfg.variant == GanVariant::Wgan {
        clip_params(&mut m.d_s, cfg.clip_c);
        clip_params(&mut m.d_r, cfg.clip_c);
    }
    let mut opt_g = Optimizer::new(cfg.gen_opt);
    let mut opt_f = Optimizer::new(cfg.gen_opt);
    let mut opt_ds = Optimizer::new(cfg.critic_opt);
    let mut opt_dr = Optimizer::new(cfg.critic_opt);
    opt_g.init(&m.g.params());
    opt_f.init(&m.f.params());
    opt_ds.init(&m.d_s.params());
    opt_dr.init(&m.d_r.params());

    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut cs = Cursor::new(domain_s.len(), rng);
    let mut cr = Cursor::new(domain_r.len(), rng);
    let iters = (domain_s.len().min(domain_r.len()) / cfg.batch).max(1);
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();

    for epoch in 0..epochs {
        for _ in 0..iters {
            for _ in 0..cfg.critic_steps() {
                let s = draw(domain_s, &mut cs, cfg, rng)?;
                let r = draw(domain_r, &mut cr, cfg, rng)?;
                let fake_r = m.g.forward(&s, Mode::Train)?.output;
                let fake_s = m.f.forward(&r, Mode::Train)?.output;
                let l_r = critic_update(cfg, &mut m.d_r, &mut opt_dr, &r, &fake_r)?;
                let l_s = critic_update(cfg, &mut m.d_s, &mut opt_ds, &s, &fake_s)?;
                let step = history.len();
                for (what, v) in [("d_r loss", l_r), ("d_s loss", l_s)] {
                    if !v.is_finite() {
                        return Err(diverged(step, Phase::Critic, what, v));
                    }
                }
                let absmax = m.critic_absmax();
                if cfg.variant == GanVariant::Wgan {
                    assert!(absmax <= cfg.clip_c, "critic parameter {absmax} escaped the clip range");
                }
                history.push(LossRecord {
                    step,
                    phase: Phase::Critic,
                    adv_sr: l_r,
                    adv_rs: l_s,
                    cycle: None,
                    total: None,
                    critic_absmax: absmax,
                });
            }
            let s = draw(domain_s, &mut cs, cfg, rng)?;
            let r = draw(domain_r, &mut cr, cfg, rng)?;
            let g = generator_update(cfg, &mut m, &mut opt_g, &mut opt_f, &s, &r)?;
            let total = total_objective(g.adv_sr, g.adv_rs, g.cycle, cfg.lambda);
            let step = history.len();
            if !total.is_finite() {
                return Err(diverged(step, Phase::Generator, "objective", total));
            }
            if !(opt_g.is_finite() && opt_f.is_finite()) {
                return Err(diverged(step, Phase::Generator, "optimizer state", f64::NAN));
            }
            history.push(LossRecord {
                step,
                phase: Phase::Generator,
                adv_sr: g.adv_sr,
                adv_rs: g.adv_rs,
                cycle: Some(g.cycle),
                total: Some(total),
                critic_absmax: m.critic_absmax(),
            });
        }
        if let Some(dir) = checkpoint_dir {
            let gp = dir.join(format!("g_epoch_{:03}.ckpt", epoch + 1));
            let fp = dir.join(format!("f_epoch_{:03}.ckpt", epoch + 1));
            save_sequential(&m.g, "cycle-generator", &gp)?;
            save_sequential(&m.f, "cycle-generator", &fp)?;
            checkpoints.push((gp, fp));
        }
    }
    Ok(TrainOutcome {
        models: m,
        history,
        checkpoints,
    })
}

pub const HISTORY_HEADER: &str = "step,phase,adv_sr,adv_rs,cycle,total,critic_absmax";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.8}")).unwrap_or_default()
}

pub fn write_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{:.8},{:.8},{},{},{:.8}",
            r.step,
            r.phase.name(),
            r.adv_sr,
            r.adv_rs,
            opt(r.cycle),
            opt(r.total),
            r.critic_absmax
        );
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |n: usize| Error::Data(format!("{}:{}: malformed loss record", path.display(), n + 1));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(n));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n));
        let maybe = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        out.push(LossRecord {
            step: f[0].parse().map_err(|_| bad(n))?,
            phase: match f[1] {
                "critic" => Phase::Critic,
                "generator" => Phase::Generator,
                _ => return Err(bad(n)),
            },
            adv_sr: num(f[2])?,
            adv_rs: num(f[3])?,
            cycle: maybe(f[4])?,
            total: maybe(f[5])?,
            critic_absmax: num(f[6])?,
        });
    }
    Ok(out)
}

const TRANSLATE_BATCH: usize = 16;

/// Runs `g` in inference mode over every image, preserving order.
pub fn translate(g: &Sequential, images: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(TRANSLATE_BATCH) {
        let x = Tensor::stack(chunk)?;
        let y = g.infer(&x)?;
        if y.shape() != x.shape() {
            return Err(Error::ShapeMismatch(format!(
                "generator maps {:?} to {:?}",
                &x.shape()[1..],
                &y.shape()[1..]
            )));
        }
        out.extend(y.unstack());
    }
    Ok(out)
}

/// Every generator over every image: `k·n` outputs, generator-major.
pub fn translate_ensemble(gens: &[Sequential], images: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(gens.len() * images.len());
    for g in gens {
        out.extend(translate(g, images)?);
    }
    Ok(out)
}

/// Splits the quota uniformly: image `i` goes through `gens[i % k]`.
pub fn translate_split(gens: &[Sequential], images: &[Tensor]) -> Result<Vec<Tensor>> {
    if gens.is_empty() {
        return Err(Error::InvalidArgument("no generators to translate with".into()));
    }
    let k = gens.len();
    let mut out: Vec<Option<Tensor>> = vec![None; images.len()];
    for (j, g) in gens.iter().enumerate() {
        let idx: Vec<usize> = (j..images.len()).step_by(k).collect();
        let picked: Vec<Tensor> = idx.iter().map(|&i| images[i].clone()).collect();
        if picked.is_empty() {
            continue;
        }
        for (i, y) in idx.into_iter().zip(translate(g, &picked)?) {
            out[i] = Some(y);
        }
    }
    Ok(out.into_iter().map(|t| t.expect("every index assigned")).collect())
}
