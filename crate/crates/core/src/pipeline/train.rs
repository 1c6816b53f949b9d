//! Staged recognizer training with CTC.
//!
//! Stages run in order on the same parameters; each stage starts a fresh
//! optimizer. Batches are drawn from a per-epoch shuffle; the last partial
//! batch is kept when it has at least two images (batch normalization needs
//! two) and dropped otherwise.

use crate::ctc::{ctc_batch, required_frames};
use crate::error::{Error, Result};
use crate::layers::{Mode, Recognizer};
use crate::metrics::quick_accuracy;
use crate::optim::{Optimizer, OptimizerKind};
use crate::synth::Dataset;
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug)]
pub struct Stage {
    pub name: String,
    pub data: Dataset,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    /// Mean CTC loss over the epoch's batches.
    pub loss: f64,
    pub heldout_ra: Option<f64>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let ra = self.heldout_ra.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        format!("{}\t{}\t{:.6}\t{}", self.stage, self.epoch, self.loss, ra)
    }
}

/// Rejects labels the model cannot emit or align before any training.
pub fn check_labels(model: &Recognizer, data: &Dataset, what: &str) -> Result<()> {
    let (t, blank) = (model.frames(), model.blank());
    for (i, l) in data.labels.iter().enumerate() {
        if let Some(&bad) = l.iter().find(|&&c| c >= blank) {
            return Err(Error::config(
                "model.classes",
                format!("{what} sample {i} uses class {bad}, but the model has {} outputs (blank {blank})", model.classes()),
            ));
        }
        let need = required_frames(l);
        if need > t {
            return Err(Error::Data(format!(
                "{what} sample {i}: label of length {} needs {need} frames, the model emits {t}",
                l.len()
            )));
        }
    }
    Ok(())
}

/// Mean CTC loss above which training counts as diverged. An untrained model
/// sits near `T·ln K`, a few hundred at most.
pub const DIVERGED_LOSS: f64 = 1e6;

/// One optimizer step on a batch; returns the mean CTC loss.
pub fn train_step(model: &mut Recognizer, opt: &mut Optimizer, x: &Tensor, labels: &[Vec<usize>]) -> Result<f64> {
    let (logits, trace) = model.forward(x, Mode::Train)?;
    let (loss, grad) = ctc_batch(&logits, labels)?;
    if !(loss < DIVERGED_LOSS) {
        return Err(Error::Divergence(format!("CTC loss became {loss}")));
    }
    let grads = model.backward(&trace, &grad)?;
    opt.step(model.params_mut(), &grads)?;
    model.commit(&trace);
    Ok(loss)
}

pub fn train_recognizer(
    model: &mut Recognizer,
    stages: &[Stage],
    batch: usize,
    heldout: Option<&Dataset>,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if stages.is_empty() {
        return Err(Error::config("train.stages", "at least one stage is required"));
    }
    if batch < 2 {
        return Err(Error::config("train.batch", "batch normalization needs at least 2 images per batch"));
    }
    for s in stages {
        if s.data.len() < 2 {
            return Err(Error::Data(format!("stage `{}` has {} images, need at least 2", s.name, s.data.len())));
        }
        check_labels(model, &s.data, &s.name)?;
    }
    let mut logs = Vec::new();
    for s in stages {
        let mut opt = Optimizer::new(s.optimizer);
        opt.init(&model.params());
        let mut order: Vec<usize> = (0..s.data.len()).collect();
        for epoch in 1..=s.epochs {
            rng.shuffle(&mut order);
            let (mut total, mut n) = (0.0, 0);
            for chunk in order.chunks(batch).filter(|c| c.len() >= 2) {
                let (x, labels) = s.data.batch(chunk)?;
                total += train_step(model, &mut opt, &x, &labels)
                    .map_err(|e| match e {
                        Error::Divergence(m) => Error::Divergence(format!("stage `{}` epoch {epoch}: {m}", s.name)),
                        e => e,
                    })?;
                n += 1;
            }
            let heldout_ra = match heldout {
                Some(h) => Some(quick_accuracy(model, &h.images, &h.labels)?),
                None => None,
            };
            let log = EpochLog {
                stage: s.name.clone(),
                epoch,
                loss: total / n.max(1) as f64,
                heldout_ra,
            };
            on_epoch(&log);
            logs.push(log);
        }
    }
    Ok(logs)
}
