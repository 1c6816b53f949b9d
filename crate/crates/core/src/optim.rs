//! SGD, Adam, RMSProp and Adadelta over lists of parameter tensors.
//!
//! Stateful optimizers must be initialized against the parameter shapes
//! before the first step; stepping an uninitialized state is an error.

use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::checkpoint::{read_tensors, write_tensors};
use crate::tensor::Tensor;

fn check_pairs(params: &[&mut Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {i}: shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    Ok(())
}

/// `p ← p − lr·g`.
pub fn sgd_step(params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
    }
    check_pairs(&params, grads)?;
    for (p, g) in params.into_iter().zip(grads) {
        for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * d;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    RmsProp { lr: f64, decay: f64, eps: f64 },
    Adadelta { rho: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Adam with β1 = 0.5, β2 = 0.999, lr = 2e-4.
    pub fn adam_gan() -> Self {
        OptimizerKind::Adam {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        OptimizerKind::RmsProp { lr, decay: 0.9, eps: 1e-8 }
    }

    pub fn adadelta() -> Self {
        OptimizerKind::Adadelta { rho: 0.95, eps: 1e-6 }
    }

    fn slots(&self) -> usize {
        match self {
            OptimizerKind::Sgd { .. } => 0,
            OptimizerKind::Adam { .. } | OptimizerKind::Adadelta { .. } => 2,
            OptimizerKind::RmsProp { .. } => 1,
        }
    }

    fn describe(&self) -> String {
        match *self {
            OptimizerKind::Sgd { lr } => format!("sgd {lr}"),
            OptimizerKind::Adam { lr, beta1, beta2, eps } => format!("adam {lr} {beta1} {beta2} {eps}"),
            OptimizerKind::RmsProp { lr, decay, eps } => format!("rmsprop {lr} {decay} {eps}"),
            OptimizerKind::Adadelta { rho, eps } => format!("adadelta {rho} {eps}"),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        let mut it = s.split_whitespace();
        let tag = it.next()?;
        let v: Vec<f64> = it.map(|t| t.parse().ok()).collect::<Option<_>>()?;
        Some(match (tag, v.as_slice()) {
            ("sgd", &[lr]) => OptimizerKind::Sgd { lr },
            ("adam", &[lr, beta1, beta2, eps]) => OptimizerKind::Adam { lr, beta1, beta2, eps },
            ("rmsprop", &[lr, decay, eps]) => OptimizerKind::RmsProp { lr, decay, eps },
            ("adadelta", &[rho, eps]) => OptimizerKind::Adadelta { rho, eps },
            _ => return None,
        })
    }
}

/// Accumulators for one parameter list: `slots[i]` holds the per-rule
/// tensors of parameter `i` (Adam: m, v; RMSProp: mean square; Adadelta:
/// mean square gradient, mean square update).
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    slots: Option<Vec<Vec<Tensor>>>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer { kind, slots: None, step: 0 }
    }

    pub fn init(&mut self, params: &[&Tensor]) {
        let n = self.kind.slots();
        self.slots = Some(
            params
                .iter()
                .map(|p| (0..n).map(|_| Tensor::zeros_like(p)).collect())
                .collect(),
        );
        self.step = 0;
    }

    pub fn is_initialized(&self) -> bool {
        self.slots.is_some()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        check_pairs(&params, grads)?;
        let slots = self
            .slots
            .as_mut()
            .ok_or_else(|| Error::State("optimizer stepped before init".into()))?;
        if slots.len() != params.len() {
            return Err(Error::State(format!(
                "state covers {} parameters, got {}",
                slots.len(),
                params.len()
            )));
        }
        for (s, p) in slots.iter().zip(&params) {
            if s.iter().any(|t| t.shape() != p.shape()) {
                return Err(Error::State("accumulator shape differs from parameter".into()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        match self.kind {
            OptimizerKind::Sgd { lr } => return sgd_step(params, grads, lr),
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), s) in params.into_iter().zip(grads).zip(slots.iter_mut()) {
                    let (m, v) = s.split_at_mut(1);
                    let (m, v) = (m[0].data_mut(), v[0].data_mut());
                    for (i, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * d;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * d * d;
                        *x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
            OptimizerKind::RmsProp { lr, decay, eps } => {
                for ((p, g), s) in params.into_iter().zip(grads).zip(slots.iter_mut()) {
                    let ms = s[0].data_mut();
                    for (i, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        ms[i] = decay * ms[i] + (1.0 - decay) * d * d;
                        *x -= lr * d / (ms[i].sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adadelta { rho, eps } => {
                for ((p, g), s) in params.into_iter().zip(grads).zip(slots.iter_mut()) {
                    let (eg, ex) = s.split_at_mut(1);
                    let (eg, ex) = (eg[0].data_mut(), ex[0].data_mut());
                    for (i, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        eg[i] = rho * eg[i] + (1.0 - rho) * d * d;
                        let dx = -((ex[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * d;
                        ex[i] = rho * ex[i] + (1.0 - rho) * dx * dx;
                        *x += dx;
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the hyperparameters, step count and accumulators.
    pub fn save(&self, path: &Path) -> Result<()> {
        let slots = self
            .slots
            .as_ref()
            .ok_or_else(|| Error::State("cannot save an uninitialized optimizer".into()))?;
        let meta = vec![
            "model optimizer".to_string(),
            format!("rule {}", self.kind.describe()),
            format!("step {}", self.step),
            format!("params {}", slots.len()),
        ];
        let tensors: Vec<&Tensor> = slots.iter().flatten().collect();
        write_tensors(path, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = read_tensors(path)?;
        let get = |key: &str| {
            meta.iter()
                .find_map(|m| m.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks `{key}`")))
        };
        let kind = OptimizerKind::parse(get("rule")?)
            .ok_or_else(|| Error::Checkpoint("unreadable optimizer rule".into()))?;
        let step = get("step")?.parse().map_err(|_| Error::Checkpoint("bad step count".into()))?;
        let n: usize = get("params")?.parse().map_err(|_| Error::Checkpoint("bad parameter count".into()))?;
        let per = kind.slots();
        if tensors.len() != n * per {
            return Err(Error::Checkpoint("optimizer accumulator count mismatch".into()));
        }
        let mut it = tensors.into_iter();
        let slots = (0..n).map(|_| (0..per).map(|_| it.next().expect("counted")).collect()).collect();
        Ok(Optimizer {
            kind,
            slots: Some(slots),
            step,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().flatten().all(|t| t.is_finite())
    }
}
