//! Plate-level and character-level accuracy, top-N accuracy and the
//! evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::ctc::{beam_search_topn, best_path_decode};
use crate::error::{Error, Result};
use crate::layers::{sample_logits, Recognizer};
use crate::tensor::Tensor;

/// Token-level edit distance (unit insert, delete and substitute costs).
pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn non_empty<T>(items: &[T], what: &str) -> Result<()> {
    if items.is_empty() {
        return Err(Error::EmptyInput(format!("{what} over no plates")));
    }
    Ok(())
}

/// Fraction of `(truth, prediction)` pairs that match exactly.
pub fn recognition_accuracy(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    non_empty(pairs, "recognition accuracy")?;
    Ok(pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64)
}

/// `1 − Σ min(edit(truth, pred), |truth|) / Σ |truth|`.
pub fn character_recognition_accuracy(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    non_empty(pairs, "character accuracy")?;
    let total: usize = pairs.iter().map(|(t, _)| t.len()).sum();
    if total == 0 {
        return Err(Error::EmptyInput("character accuracy with empty ground truth".into()));
    }
    let wrong: usize = pairs.iter().map(|(t, p)| levenshtein(t, p).min(t.len())).sum();
    Ok(1.0 - wrong as f64 / total as f64)
}

/// Fraction of records whose truth is among the first `n` candidates.
pub fn topn_accuracy(records: &[(Vec<usize>, Vec<Vec<usize>>)], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("top-N needs N >= 1".into()));
    }
    non_empty(records, "top-N accuracy")?;
    let hit = records.iter().filter(|(t, c)| c.iter().take(n).any(|x| x == t)).count();
    Ok(hit as f64 / records.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateRecord {
    pub truth: Vec<usize>,
    pub prediction: Vec<usize>,
    /// Beam candidates with probabilities, best first.
    pub candidates: Vec<(Vec<usize>, f64)>,
}

impl PlateRecord {
    pub fn correct(&self) -> bool {
        self.truth == self.prediction
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ra: f64,
    pub cra: f64,
    pub top_n: BTreeMap<usize, f64>,
    pub records: Vec<PlateRecord>,
}

pub const TOP_NS: [usize; 3] = [1, 3, 5];

impl EvalReport {
    pub fn from_records(records: Vec<PlateRecord>, ns: &[usize]) -> Result<Self> {
        let pairs: Vec<(Vec<usize>, Vec<usize>)> =
            records.iter().map(|r| (r.truth.clone(), r.prediction.clone())).collect();
        let lists: Vec<(Vec<usize>, Vec<Vec<usize>>)> = records
            .iter()
            .map(|r| (r.truth.clone(), r.candidates.iter().map(|c| c.0.clone()).collect()))
            .collect();
        let mut top_n = BTreeMap::new();
        for &n in ns {
            top_n.insert(n, topn_accuracy(&lists, n)?);
        }
        Ok(EvalReport {
            ra: recognition_accuracy(&pairs)?,
            cra: character_recognition_accuracy(&pairs)?,
            top_n,
            records,
        })
    }

    /// One tab-separated line per plate (truth, prediction, top candidates,
    /// flag), then `#` summary lines.
    pub fn to_text(&self, show: &dyn Fn(&[usize]) -> String) -> String {
        let mut s = String::from("# truth\tprediction\ttop5\tcorrect\n");
        for r in &self.records {
            let cands: Vec<String> = r
                .candidates
                .iter()
                .take(5)
                .map(|(c, p)| format!("{}:{p:.4}", show(c)))
                .collect();
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                show(&r.truth),
                show(&r.prediction),
                cands.join(" "),
                u8::from(r.correct())
            );
        }
        let _ = writeln!(s, "# plates {}", self.records.len());
        let _ = writeln!(s, "# ra {:.6}", self.ra);
        let _ = writeln!(s, "# cra {:.6}", self.cra);
        for (n, v) in &self.top_n {
            let _ = writeln!(s, "# top{n} {v:.6}");
        }
        s
    }
}

/// Decodes `[T, K]` logits: best-path prediction plus beam candidates.
pub fn decode_logits(logits: &Tensor, top: usize, beam_width: usize) -> Result<(Vec<usize>, Vec<(Vec<usize>, f64)>)> {
    let prediction = best_path_decode(logits)?;
    let candidates = beam_search_topn(&logits.softmax_rows(), top, beam_width)?;
    Ok((prediction, candidates))
}

/// Runs the recognizer in inference mode over `images` in batches.
pub fn predict(model: &Recognizer, images: &[Tensor], top: usize, beam_width: usize) -> Result<Vec<(Vec<usize>, Vec<(Vec<usize>, f64)>)>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(32) {
        let logits = model.infer(&Tensor::stack(chunk)?)?;
        for i in 0..chunk.len() {
            out.push(decode_logits(&sample_logits(&logits, i)?, top, beam_width)?);
        }
    }
    Ok(out)
}

/// Report with top-5 candidates from a width-10 beam.
pub fn evaluate(model: &Recognizer, images: &[Tensor], labels: &[Vec<usize>]) -> Result<EvalReport> {
    evaluate_with(model, images, labels, 5, 10)
}

pub fn evaluate_with(model: &Recognizer, images: &[Tensor], labels: &[Vec<usize>], top: usize, beam_width: usize) -> Result<EvalReport> {
    if images.len() != labels.len() {
        return Err(Error::Data(format!("{} images but {} labels", images.len(), labels.len())));
    }
    non_empty(images, "evaluation")?;
    let decoded = predict(model, images, top, beam_width)?;
    let records = decoded
        .into_iter()
        .zip(labels)
        .map(|((prediction, candidates), truth)| PlateRecord {
            truth: truth.clone(),
            prediction,
            candidates,
        })
        .collect();
    let ns: Vec<usize> = TOP_NS.iter().copied().filter(|&n| n <= top).collect();
    EvalReport::from_records(records, &ns)
}

/// Plate accuracy only, skipping the beam search.
pub fn quick_accuracy(model: &Recognizer, images: &[Tensor], labels: &[Vec<usize>]) -> Result<f64> {
    non_empty(images, "evaluation")?;
    let mut hit = 0;
    for (chunk, truth) in images.chunks(32).zip(labels.chunks(32)) {
        let logits = model.infer(&Tensor::stack(chunk)?)?;
        for (i, t) in truth.iter().enumerate() {
            if &best_path_decode(&sample_logits(&logits, i)?)? == t {
                hit += 1;
            }
        }
    }
    Ok(hit as f64 / images.len() as f64)
}
