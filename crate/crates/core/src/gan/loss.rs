//! Adversarial and cycle objectives with their gradients.
//!
//! Expectations are means over every element of a score grid batch.

use crate::error::{Error, Result};
use crate::gan::CycleModels;
use crate::layers::{Mode, Sequential};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Generator,
    Discriminator,
}

/// A loss to be minimized and its gradients with respect to the scores.
#[derive(Clone, Debug)]
pub struct AdvLoss {
    pub value: f64,
    /// `None` on the generator side.
    pub grad_real: Option<Tensor>,
    pub grad_fake: Tensor,
}

fn scores<'a>(real: Option<&'a Tensor>, fake: &Tensor, side: Side) -> Result<Option<&'a Tensor>> {
    if fake.is_empty() {
        return Err(Error::EmptyInput("empty score grid".into()));
    }
    match (side, real) {
        (Side::Discriminator, None) => Err(Error::InvalidArgument("discriminator loss needs real scores".into())),
        (_, Some(r)) if r.shape() != fake.shape() => Err(Error::ShapeMismatch(format!(
            "real scores {:?} vs fake scores {:?}",
            r.shape(),
            fake.shape()
        ))),
        (Side::Discriminator, r) => Ok(r),
        (Side::Generator, _) => Ok(None),
    }
}

/// Discriminator: `E[(D(r) − 1)²] + E[D(f)²]`; generator: `E[(D(f) − 1)²]`.
pub fn lsgan_loss(real: Option<&Tensor>, fake: &Tensor, side: Side) -> Result<AdvLoss> {
    let real = scores(real, fake, side)?;
    let n = fake.len() as f64;
    match real {
        Some(r) => Ok(AdvLoss {
            value: r.data().iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / n
                + fake.data().iter().map(|v| v * v).sum::<f64>() / n,
            grad_real: Some(r.map(|v| 2.0 * (v - 1.0) / n)),
            grad_fake: fake.map(|v| 2.0 * v / n),
        }),
        None => Ok(AdvLoss {
            value: fake.data().iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / n,
            grad_real: None,
            grad_fake: fake.map(|v| 2.0 * (v - 1.0) / n),
        }),
    }
}

/// `E[D(r)] − E[D(f)]`, the quantity the critic maximizes.
pub fn critic_objective(real: &Tensor, fake: &Tensor) -> Result<f64> {
    scores(Some(real), fake, Side::Discriminator)?;
    Ok(real.mean() - fake.mean())
}

/// Critic: `−(E[D(r)] − E[D(f)])`; generator: `−E[D(f)]`.
pub fn wgan_loss(real: Option<&Tensor>, fake: &Tensor, side: Side) -> Result<AdvLoss> {
    let real = scores(real, fake, side)?;
    let n = fake.len() as f64;
    match real {
        Some(r) => Ok(AdvLoss {
            value: -(r.mean() - fake.mean()),
            grad_real: Some(Tensor::fill(r.shape(), -1.0 / n)?),
            grad_fake: Tensor::fill(fake.shape(), 1.0 / n)?,
        }),
        None => Ok(AdvLoss {
            value: -fake.mean(),
            grad_real: None,
            grad_fake: Tensor::fill(fake.shape(), -1.0 / n)?,
        }),
    }
}

/// Mean absolute error and its (sub)gradient with respect to `pred`.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "l1: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("l1 of empty tensors".into()));
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        value += d.abs();
        grad.push(if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        });
    }
    Ok((value / n, Tensor::from_vec(pred.shape(), grad)?))
}

fn roundtrip(a: &Sequential, b: &Sequential, x: &Tensor, mode: Mode) -> Result<f64> {
    let y = a.forward(x, mode)?.output;
    let back = b.forward(&y, mode)?.output;
    Ok(l1_loss(&back, x)?.0)
}

/// `E|F(G(s)) − s| + E|G(F(r)) − r|` over `[B, H, W, C]` batches.
pub fn cycle_loss(s: &Tensor, r: &Tensor, models: &CycleModels, mode: Mode) -> Result<f64> {
    if s.is_empty() || r.is_empty() {
        return Err(Error::EmptyInput("cycle loss needs non-empty batches".into()));
    }
    if s.shape()[1..] != r.shape()[1..] {
        return Err(Error::ShapeMismatch(format!(
            "domain geometries differ: {:?} vs {:?}",
            s.shape(),
            r.shape()
        )));
    }
    Ok(roundtrip(&models.g, &models.f, s, mode)? + roundtrip(&models.f, &models.g, r, mode)?)
}

pub fn total_objective(adv_sr: f64, adv_rs: f64, cyc: f64, lambda: f64) -> f64 {
    adv_sr + adv_rs + lambda * cyc
}

/// Clamps every parameter of `net` into `[−c, c]`.
pub fn clip_params(net: &mut Sequential, c: f64) {
    assert!(c > 0.0, "clip bound must be positive");
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v = v.clamp(-c, c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::{GanConfig, GanVariant};
    use crate::layers::{Conv2d, Layer};
    use crate::tensor::{Dist, Rng};

    fn grid(v: f64) -> Tensor {
        Tensor::fill(&[2, 4, 4, 1], v).unwrap()
    }

    #[test]
    fn lsgan_optimum_and_direct_evaluation() {
        let d = lsgan_loss(Some(&grid(1.0)), &grid(0.0), Side::Discriminator).unwrap();
        assert_eq!(d.value, 0.0);
        assert_eq!(lsgan_loss(None, &grid(1.0), Side::Generator).unwrap().value, 0.0);

        let mut rng = Rng::new(3);
        let u = Dist::Uniform { low: -2.0, high: 2.0 };
        let r = Tensor::random(&[3, 5, 5, 1], u, &mut rng).unwrap();
        let f = Tensor::random(&[3, 5, 5, 1], u, &mut rng).unwrap();
        let n = r.len() as f64;
        let mut want = 0.0;
        for i in 0..r.len() {
            want += (r.data()[i] - 1.0).powi(2) / n + f.data()[i].powi(2) / n;
        }
        let got = lsgan_loss(Some(&r), &f, Side::Discriminator).unwrap();
        assert!((got.value - want).abs() < 1e-12);
        let gen: f64 = f.data().iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / n;
        assert!((lsgan_loss(None, &f, Side::Generator).unwrap().value - gen).abs() < 1e-12);
    }

    #[test]
    fn wgan_arithmetic() {
        assert_eq!(critic_objective(&grid(0.3), &grid(0.3)).unwrap(), 0.0);
        assert_eq!(critic_objective(&grid(1.0), &grid(-1.0)).unwrap(), 2.0);
        let l = wgan_loss(Some(&grid(1.0)), &grid(-1.0), Side::Discriminator).unwrap();
        assert_eq!(l.value, -2.0);
        let mut rng = Rng::new(8);
        let f = Tensor::random(&[2, 3, 3, 1], Dist::Gaussian { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let direct = -f.data().iter().sum::<f64>() / f.len() as f64;
        assert!((wgan_loss(None, &f, Side::Generator).unwrap().value - direct).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Tensor::zeros(&[2, 4, 4, 1]);
        let b = Tensor::zeros(&[2, 3, 4, 1]);
        assert!(matches!(lsgan_loss(Some(&a), &b, Side::Discriminator), Err(Error::ShapeMismatch(_))));
        assert!(matches!(wgan_loss(Some(&a), &b, Side::Discriminator), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = Rng::new(2);
        let u = Dist::Uniform { low: -1.5, high: 1.5 };
        let r = Tensor::random(&[1, 3, 3, 1], u, &mut rng).unwrap();
        let f = Tensor::random(&[1, 3, 3, 1], u, &mut rng).unwrap();
        for loss in [lsgan_loss, wgan_loss] {
            for side in [Side::Generator, Side::Discriminator] {
                let l = loss(Some(&r), &f, side).unwrap();
                let err = crate::tensor::finite_diff_check(
                    |p| loss(Some(&r), p, side).unwrap().value,
                    &f,
                    &l.grad_fake,
                    1e-6,
                )
                .unwrap();
                assert!(err < 1e-6);
                if let Some(gr) = &l.grad_real {
                    let err = crate::tensor::finite_diff_check(
                        |p| loss(Some(p), &f, side).unwrap().value,
                        &r,
                        gr,
                        1e-6,
                    )
                    .unwrap();
                    assert!(err < 1e-6);
                }
            }
        }
    }

    /// A generator that returns its input exactly.
    fn identity_net() -> Sequential {
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        for c in 0..3 {
            k.data_mut()[c * 3 + c] = 1.0;
        }
        Sequential::new(vec![Layer::Conv2d(
            Conv2d::from_parts(k, Tensor::zeros(&[3]), (1, 1), (0, 0)).unwrap(),
        )])
    }

    #[test]
    fn cycle_loss_cases() {
        let cfg = GanConfig::toy(GanVariant::Wgan);
        let mut rng = Rng::new(4);
        let mut models = CycleModels::new(&cfg, &mut rng).unwrap();
        let u = Dist::Uniform { low: 0.0, high: 1.0 };
        let s = Tensor::random(&[2, 32, 32, 3], u, &mut rng).unwrap();
        let r = Tensor::random(&[2, 32, 32, 3], u, &mut rng).unwrap();

        let random = cycle_loss(&s, &r, &models, Mode::Train).unwrap();
        let oracle = {
            let rec_s = models.f.forward(&models.g.forward(&s, Mode::Train).unwrap().output, Mode::Train).unwrap();
            let rec_r = models.g.forward(&models.f.forward(&r, Mode::Train).unwrap().output, Mode::Train).unwrap();
            let mae = |a: &Tensor, b: &Tensor| {
                a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
            };
            mae(&rec_s.output, &s) + mae(&rec_r.output, &r)
        };
        assert!(random >= 0.0);
        assert!((random - oracle).abs() < 1e-12);

        models.g = identity_net();
        models.f = identity_net();
        assert_eq!(cycle_loss(&s, &r, &models, Mode::Infer).unwrap(), 0.0);

        let shifted = s.map(|v| v + 0.1);
        let (first, _) = l1_loss(&shifted, &s).unwrap();
        assert!((first - 0.1).abs() < 1e-12);

        let odd = Tensor::zeros(&[2, 16, 32, 3]);
        assert!(matches!(cycle_loss(&s, &odd, &models, Mode::Infer), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn objective_is_linear_in_lambda() {
        assert_eq!(total_objective(1.0, 1.0, 0.5, 10.0), 7.0);
        assert_eq!(total_objective(0.3, 0.2, 0.0, 10.0), 0.5);
        let (a, b) = (total_objective(0.4, 0.1, 0.25, 2.0), total_objective(0.4, 0.1, 0.25, 6.0));
        assert!(((b - a) / 4.0 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn clipping() {
        let cfg = GanConfig::toy(GanVariant::Wgan);
        let mut net = crate::gan::build_patch_discriminator(&cfg, &mut Rng::new(1)).unwrap();
        net.params_mut()[0].data_mut()[0] = 0.5;
        clip_params(&mut net, 0.01);
        assert_eq!(net.params()[0].data()[0], 0.01);
        assert!(net.params().iter().all(|p| p.max_abs() <= 0.01));
        let before = net.clone();
        clip_params(&mut net, 0.01);
        assert_eq!(before, net);
    }
}
