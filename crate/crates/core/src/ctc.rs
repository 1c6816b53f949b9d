//! Connectionist temporal classification: loss, gradients and decoding.
//!
//! A frame distribution is a `[T, K]` tensor. The blank is always the last
//! class, `K-1`; label sequences must not contain it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Tensor};

/// Largest path count the brute-force oracle will enumerate.
pub const ORACLE_LIMIT: f64 = 1e7;

fn dims(dist: &Tensor) -> Result<(usize, usize)> {
    match *dist.shape() {
        [t, k] if t > 0 && k >= 2 => Ok((t, k)),
        _ => Err(Error::ShapeMismatch(format!(
            "frame distribution must be [T, K] with K >= 2, got {:?}",
            dist.shape()
        ))),
    }
}

fn check_target(target: &[usize], classes: usize) -> Result<()> {
    let blank = classes - 1;
    for &l in target {
        if l >= blank {
            return Err(Error::InvalidLabel { label: l, classes: blank });
        }
    }
    Ok(())
}

/// Frames needed to emit `target`: one per label plus a blank between each
/// pair of equal neighbours.
pub fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Merges runs of equal symbols, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Product of the per-frame probabilities along `path`.
pub fn path_probability(dist: &Tensor, path: &[usize]) -> Result<f64> {
    let (t_len, k) = dims(dist)?;
    if path.len() != t_len {
        return Err(Error::ShapeMismatch(format!("path of length {} over {t_len} frames", path.len())));
    }
    let mut p = 1.0;
    for (t, &c) in path.iter().enumerate() {
        if c >= k {
            return Err(Error::InvalidLabel { label: c, classes: k });
        }
        p *= dist.data()[t * k + c];
    }
    Ok(p)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Forward–backward over log frame probabilities. Returns `(log p, occupancy)`
/// where `occupancy[t*K + k]` is the posterior mass of class `k` at frame `t`.
fn forward_backward(logp: &[f64], t_len: usize, k: usize, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_target(target, k)?;
    let need = required_frames(target);
    if need > t_len {
        return Err(Error::InfeasibleTarget {
            target_len: target.len(),
            required: need,
            frames: t_len,
        });
    }
    let blank = k - 1;
    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len).map(|s| if s % 2 == 0 { blank } else { target[s / 2] }).collect();
    let skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = logp[blank];
    if s_len > 1 {
        alpha[1] = logp[ext[1]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if skip(s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + logp[t * k + ext[s]] };
        }
    }
    let last = (t_len - 1) * s_len;
    let mut logz = alpha[last + s_len - 1];
    if s_len > 1 {
        logz = log_add(logz, alpha[last + s_len - 2]);
    }
    if !logz.is_finite() {
        return Err(Error::Numeric("ctc forward pass lost all probability mass".into()));
    }

    // beta[t, s]: log probability of finishing the labelling from state s at
    // frame t, not counting frame t itself.
    let mut beta = vec![ninf; t_len * s_len];
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let nxt = (t + 1) * s_len;
            let mut b = beta[nxt + s] + logp[(t + 1) * k + ext[s]];
            if s + 1 < s_len {
                b = log_add(b, beta[nxt + s + 1] + logp[(t + 1) * k + ext[s + 1]]);
            }
            if s + 2 < s_len && skip(s + 2) {
                b = log_add(b, beta[nxt + s + 2] + logp[(t + 1) * k + ext[s + 2]]);
            }
            beta[t * s_len + s] = b;
        }
    }

    let mut occ = vec![0.0; t_len * k];
    for t in 0..t_len {
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            if v > ninf {
                occ[t * k + ext[s]] += (v - logz).exp();
            }
        }
    }
    Ok((logz, occ))
}

fn log_softmax_rows(logits: &Tensor, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut probs = logits.data().to_vec();
    let mut logp = Vec::with_capacity(probs.len());
    for row in probs.chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        logp.extend(row.iter().map(|v| v - lse));
        softmax_in_place(row);
    }
    (logp, probs)
}

/// `−log p(target | logits)` with the softmax folded in; the gradient is with
/// respect to the pre-softmax logits.
pub fn ctc_loss(logits: &Tensor, target: &[usize]) -> Result<(f64, Tensor)> {
    let (t_len, k) = dims(logits)?;
    logits.check_finite("ctc logits")?;
    let (logp, probs) = log_softmax_rows(logits, k);
    let (logz, occ) = forward_backward(&logp, t_len, k, target)?;
    let grad: Vec<f64> = probs.iter().zip(&occ).map(|(y, o)| y - o).collect();
    Ok((-logz, Tensor::from_vec(&[t_len, k], grad)?))
}

/// Loss for an already-normalized distribution.
pub fn ctc_loss_from_probs(dist: &Tensor, target: &[usize]) -> Result<f64> {
    let (t_len, k) = dims(dist)?;
    let logp: Vec<f64> = dist.data().iter().map(|&p| p.ln()).collect();
    Ok(-forward_backward(&logp, t_len, k, target)?.0)
}

/// Mean loss over a `[B, T, K]` logit batch and its gradient.
pub fn ctc_batch(logits: &Tensor, targets: &[Vec<usize>]) -> Result<(f64, Tensor)> {
    let [b, t_len, k] = *logits.shape() else {
        return Err(Error::ShapeMismatch(format!("logits must be [B,T,K], got {:?}", logits.shape())));
    };
    if targets.len() != b {
        return Err(Error::ShapeMismatch(format!("{} targets for a batch of {b}", targets.len())));
    }
    let mut grad = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    let n = t_len * k;
    for (i, target) in targets.iter().enumerate() {
        let one = Tensor::from_vec(&[t_len, k], logits.data()[i * n..(i + 1) * n].to_vec())?;
        let (loss, g) = ctc_loss(&one, target)?;
        total += loss;
        grad.extend(g.data().iter().map(|v| v / b as f64));
    }
    Ok((total / b as f64, Tensor::from_vec(logits.shape(), grad)?))
}

/// Per-frame argmax (lowest class on ties), collapsed. Works on either
/// probabilities or logits.
pub fn best_path_decode(dist: &Tensor) -> Result<Vec<usize>> {
    let (_, k) = dims(dist)?;
    let path: Vec<usize> = dist
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(collapse(&path, k - 1))
}

#[derive(Clone, Copy)]
struct Beam {
    blank: f64,
    non_blank: f64,
}

impl Beam {
    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

fn ranked(beams: &BTreeMap<Vec<usize>, Beam>) -> Vec<(Vec<usize>, f64)> {
    let mut v: Vec<(Vec<usize>, f64)> = beams.iter().map(|(p, b)| (p.clone(), b.total())).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Prefix beam search over labellings. Paths that collapse to the same
/// labelling are merged, so each score is that labelling's probability (exact
/// when nothing is pruned). Returns up to `n` labellings, best first.
pub fn beam_search_topn(dist: &Tensor, n: usize, beam_width: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    if n == 0 {
        return Err(Error::InvalidArgument("top-n needs n >= 1".into()));
    }
    if beam_width < n {
        return Err(Error::InvalidArgument(format!("beam width {beam_width} is smaller than n = {n}")));
    }
    let (_, k) = dims(dist)?;
    let blank = k - 1;
    let ninf = f64::NEG_INFINITY;
    let mut beams: BTreeMap<Vec<usize>, Beam> = BTreeMap::new();
    beams.insert(Vec::new(), Beam { blank: 0.0, non_blank: ninf });
    for row in dist.data().chunks(k) {
        let logp: Vec<f64> = row.iter().map(|&p| p.ln()).collect();
        let mut next: BTreeMap<Vec<usize>, Beam> = BTreeMap::new();
        let mut add = |prefix: Vec<usize>, b: f64, nb: f64| {
            let e = next.entry(prefix).or_insert(Beam { blank: ninf, non_blank: ninf });
            e.blank = log_add(e.blank, b);
            e.non_blank = log_add(e.non_blank, nb);
        };
        for (prefix, beam) in &beams {
            let total = beam.total();
            add(prefix.clone(), total + logp[blank], ninf);
            let last = prefix.last().copied();
            for c in 0..blank {
                let mut ext = prefix.clone();
                ext.push(c);
                if Some(c) == last {
                    // Repeating the last symbol without a blank stays on the prefix.
                    add(prefix.clone(), ninf, beam.non_blank + logp[c]);
                    add(ext, ninf, beam.blank + logp[c]);
                } else {
                    add(ext, ninf, total + logp[c]);
                }
            }
        }
        let keep: Vec<Vec<usize>> = ranked(&next).into_iter().take(beam_width).map(|(p, _)| p).collect();
        beams = keep.into_iter().map(|p| {
            let b = next[&p];
            (p, b)
        }).collect();
    }
    Ok(ranked(&beams)
        .into_iter()
        .filter(|(_, s)| *s > ninf)
        .take(n)
        .map(|(p, s)| (p, s.exp()))
        .collect())
}

/// Exhaustive sum over every path that collapses to `target`.
pub fn brute_force_label_probability(dist: &Tensor, target: &[usize]) -> Result<f64> {
    let (t_len, k) = dims(dist)?;
    check_target(target, k)?;
    let paths = (k as f64).powi(t_len as i32);
    if paths > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge { paths, limit: ORACLE_LIMIT });
    }
    if required_frames(target) > t_len {
        return Ok(0.0);
    }
    let blank = k - 1;
    let d = dist.data();
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == target {
            total += path.iter().enumerate().map(|(t, &c)| d[t * k + c]).product::<f64>();
        }
        let mut i = 0;
        loop {
            if i == t_len {
                return Ok(total);
            }
            path[i] += 1;
            if path[i] < k {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, Dist, Rng};
    use proptest::prelude::*;

    fn random_dist(t: usize, k: usize, rng: &mut Rng) -> Tensor {
        Tensor::random(&[t, k], Dist::Gaussian { mean: 0.0, std: 1.5 }, rng).unwrap().softmax_rows()
    }

    /// Exhaustive labelling probabilities, grouped by collapsed path.
    fn all_labellings(dist: &Tensor) -> Vec<(Vec<usize>, f64)> {
        let (t_len, k) = (dist.shape()[0], dist.shape()[1]);
        let mut map: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        let total = k.pow(t_len as u32);
        for code in 0..total {
            let mut c = code;
            let path: Vec<usize> = (0..t_len)
                .map(|_| {
                    let v = c % k;
                    c /= k;
                    v
                })
                .collect();
            *map.entry(collapse(&path, k - 1)).or_default() += path_probability(dist, &path).unwrap();
        }
        let mut v: Vec<_> = map.into_iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    fn ids(s: &str) -> Vec<usize> {
        s.chars().map(|c| if c == '-' { 2 } else { c as usize - 'a' as usize }).collect()
    }

    #[test]
    fn collapse_fixtures() {
        assert_eq!(collapse(&ids("aa-ab--"), 2), ids("aab"));
        assert_eq!(collapse(&ids("-a-aa-b"), 2), ids("aab"));
        assert!(collapse(&ids("----"), 2).is_empty());
    }

    #[test]
    fn path_probability_cases() {
        let u = Tensor::fill(&[4, 5], 0.2).unwrap();
        assert!((path_probability(&u, &[0, 1, 4, 2]).unwrap() - 0.2f64.powi(4)).abs() < 1e-15);
        let mut rng = Rng::new(3);
        let d = random_dist(3, 3, &mut rng);
        let want = d.data()[0] * d.data()[3 + 2] * d.data()[6 + 1];
        assert_eq!(path_probability(&d, &[0, 2, 1]).unwrap(), want);
        assert!(matches!(path_probability(&d, &[0, 3, 1]), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn single_frame_one_hot_has_zero_loss() {
        let logits = Tensor::from_vec(&[1, 3], vec![50.0, -50.0, -50.0]).unwrap();
        let (loss, _) = ctc_loss(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn loss_matches_enumeration_on_small_instance() {
        let mut rng = Rng::new(11);
        let logits = Tensor::random(&[3, 3], Dist::Gaussian { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let (loss, _) = ctc_loss(&logits, &[0, 1]).unwrap();
        let p = brute_force_label_probability(&logits.softmax_rows(), &[0, 1]).unwrap();
        assert!(((-loss).exp() - p).abs() / p < 1e-10);
        assert!((ctc_loss_from_probs(&logits.softmax_rows(), &[0, 1]).unwrap() - loss).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let logits = Tensor::random(&[4, 4], Dist::Gaussian { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let target = [0, 2, 2];
        let (_, grad) = ctc_loss(&logits, &target).unwrap();
        let err = finite_diff_check(|l| ctc_loss(l, &target).unwrap().0, &logits, &grad, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn infeasible_and_invalid_targets() {
        let logits = Tensor::zeros(&[3, 3]);
        // "aa" needs a blank in between; "aaa" needs 5 frames.
        assert!(ctc_loss(&logits, &[0, 0]).is_ok());
        assert!(matches!(
            ctc_loss(&logits, &[0, 0, 0]),
            Err(Error::InfeasibleTarget { required: 5, frames: 3, .. })
        ));
        assert!(matches!(ctc_loss(&logits, &[2]), Err(Error::InvalidLabel { .. })));
        assert_eq!(brute_force_label_probability(&logits.softmax_rows(), &[0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn empty_target_is_all_blank_probability() {
        let mut rng = Rng::new(2);
        let d = random_dist(5, 3, &mut rng);
        let want: f64 = (0..5).map(|t| d.data()[t * 3 + 2]).product();
        let p = brute_force_label_probability(&d, &[]).unwrap();
        assert!((p - want).abs() < 1e-15);
        assert!(((-ctc_loss_from_probs(&d, &[]).unwrap()).exp() - want).abs() / want < 1e-10);
    }

    #[test]
    fn oracle_guard() {
        let d = Tensor::fill(&[15, 4], 0.25).unwrap();
        assert!(matches!(brute_force_label_probability(&d, &[0]), Err(Error::OracleTooLarge { .. })));
    }

    #[test]
    fn best_path_cases() {
        let mut d = Tensor::zeros(&[4, 3]);
        for (t, c) in [0, 0, 2, 1].iter().enumerate() {
            d.data_mut()[t * 3 + c] = 1.0;
        }
        assert_eq!(best_path_decode(&d).unwrap(), vec![0, 1]);
        let u = Tensor::fill(&[4, 3], 1.0 / 3.0).unwrap();
        assert_eq!(best_path_decode(&u).unwrap(), vec![0]);
    }

    #[test]
    fn beam_search_matches_exhaustive_labellings() {
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            let d = random_dist(3, 3, &mut rng);
            let truth = all_labellings(&d);
            let got = beam_search_topn(&d, 5, 64).unwrap();
            for ((lg, sg), (lt, st)) in got.iter().zip(&truth) {
                assert!((sg - st).abs() < 1e-9);
                if (sg - st).abs() < 1e-12 {
                    assert_eq!(lg, lt);
                }
            }
        }
    }

    #[test]
    fn beam_search_one_hot_and_prefix_property() {
        let mut d = Tensor::fill(&[5, 4], 0.0).unwrap();
        for (t, c) in [1, 1, 3, 0, 2].iter().enumerate() {
            d.data_mut()[t * 4 + c] = 1.0;
        }
        let top = beam_search_topn(&d, 1, 16).unwrap();
        assert_eq!(top[0].0, best_path_decode(&d).unwrap());
        assert!((top[0].1 - 1.0).abs() < 1e-12);

        let mut rng = Rng::new(4);
        let r = random_dist(6, 4, &mut rng);
        let a = beam_search_topn(&r, 3, 16).unwrap();
        let b = beam_search_topn(&r, 5, 16).unwrap();
        assert_eq!(a[..], b[..3]);
        assert!(matches!(beam_search_topn(&r, 5, 4), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn loss_agrees_with_oracle(seed in 0u64..10_000, t in 1usize..=6, labels in 1usize..=3, len in 0usize..=3) {
            let mut rng = Rng::new(seed);
            let k = labels + 1;
            let target: Vec<usize> = (0..len).map(|_| rng.below(labels)).collect();
            let d = random_dist(t, k, &mut rng);
            let p = brute_force_label_probability(&d, &target).unwrap();
            match ctc_loss_from_probs(&d, &target) {
                Ok(loss) => {
                    prop_assert!(loss >= 0.0);
                    prop_assert!(((-loss).exp() - p).abs() <= 1e-10 * p);
                }
                Err(Error::InfeasibleTarget { .. }) => prop_assert_eq!(p, 0.0),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn collapse_never_emits_blank_and_ignores_extra_blanks(path in proptest::collection::vec(0usize..4, 0..12), at in 0usize..12) {
            let blank = 3;
            let c = collapse(&path, blank);
            prop_assert!(!c.contains(&blank));
            let i = at.min(path.len());
            // Inserting a blank next to an existing blank, or between distinct labels, changes nothing.
            let boundary = i == 0 || i == path.len() || path[i - 1] != path[i] || path[i] == blank;
            if boundary {
                let mut p2 = path.clone();
                p2.insert(i, blank);
                prop_assert_eq!(collapse(&p2, blank), c);
            }
        }

        #[test]
        fn best_path_invariant_under_monotone_rescaling(seed in 0u64..10_000) {
            let mut rng = Rng::new(seed);
            let d = random_dist(7, 5, &mut rng);
            let scaled = d.map(|p| 3.0 * p.powf(0.5) + 1.0);
            prop_assert_eq!(best_path_decode(&d).unwrap(), best_path_decode(&scaled).unwrap());
        }
    }
}
