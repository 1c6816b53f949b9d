//! Confidence maps: per-frame class distributions averaged over random
//! inputs, showing which classes a model favours at which positions.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Recognizer;
use crate::synth::dataset::write_pgm;
use crate::tensor::{Rng, Tensor};

/// `[classes, T]`: column `t` is the mean softmax at frame `t` over
/// `n_random` uniform-noise images of the model's input geometry.
pub fn confidence_map(model: &Recognizer, n_random: usize, rng: &mut Rng) -> Result<Tensor> {
    if n_random == 0 {
        return Err(Error::InvalidArgument("confidence map needs at least one image".into()));
    }
    let [h, w, c] = model.spec.input;
    let (t, k) = (model.frames(), model.classes());
    let mut acc = vec![0.0; t * k];
    let mut left = n_random;
    while left > 0 {
        let b = left.min(32);
        let data = (0..b * h * w * c).map(|_| rng.uniform(0.0, 1.0)).collect();
        let probs = model.infer(&Tensor::from_vec(&[b, h, w, c], data)?)?.softmax_rows();
        for (i, v) in probs.data().iter().enumerate() {
            acc[i % (t * k)] += v;
        }
        left -= b;
    }
    let mut out = vec![0.0; k * t];
    for f in 0..t {
        for cl in 0..k {
            out[cl * t + f] = acc[f * k + cl] / n_random as f64;
        }
    }
    Tensor::from_vec(&[k, t], out)
}

/// Largest deviation of any column sum from 1.
pub fn column_sum_error(map: &Tensor) -> f64 {
    let (k, t) = (map.shape()[0], map.shape()[1]);
    (0..t)
        .map(|f| ((0..k).map(|c| map.data()[c * t + f]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// CSV with one row per class, labelled by `names`.
pub fn confidence_csv(map: &Tensor, names: &[String]) -> String {
    let (k, t) = (map.shape()[0], map.shape()[1]);
    let mut s = String::from("class");
    for f in 0..t {
        let _ = write!(s, ",t{f}");
    }
    s.push('\n');
    for c in 0..k {
        s.push_str(names.get(c).map(String::as_str).unwrap_or("?"));
        for f in 0..t {
            let _ = write!(s, ",{:.6}", map.data()[c * t + f]);
        }
        s.push('\n');
    }
    s
}

/// Grayscale image, classes down and frames across, scaled so the largest
/// entry is white.
pub fn write_confidence_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let (k, t) = (map.shape()[0], map.shape()[1]);
    let top = map.max_abs().max(f64::MIN_POSITIVE);
    let scaled: Vec<f64> = map.data().iter().map(|v| v / top).collect();
    write_pgm(path, t, k, &scaled)
}
