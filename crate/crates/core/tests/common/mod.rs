//! Oracles shared by the integration tests. Nothing here calls the library's
//! own reference routines: CTC probabilities come from explicit path
//! enumeration, MAC counts from the closed forms, gradients from central
//! differences.

#![allow(dead_code)]

use std::collections::HashMap;

use platerec::ctc::ctc_batch;
use platerec::layers::{
    build_crnn, BatchNorm, BiLstm, Conv2d, Depthwise, Layer, Linear, MaxPool, Mode, NetworkSpec, Sequential,
};
use platerec::tensor::Dist;
use platerec::{Rng, Tensor};

pub const GRAD_TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

pub fn gaussian(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::random(shape, Dist::Gaussian { mean: 0.0, std: 1.0 }, rng).unwrap()
}

/// Row-wise softmax of a `[T, K]` matrix, written out longhand.
pub fn softmax(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != blank {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Probability of every labelling reachable in `T` frames, summed over all
/// `K^T` alignments. Blank is the last class.
pub fn labelling_distribution(probs: &[Vec<f64>]) -> HashMap<Vec<usize>, f64> {
    let (t, k) = (probs.len(), probs[0].len());
    let mut out = HashMap::new();
    let mut path = vec![0usize; t];
    loop {
        let p: f64 = path.iter().enumerate().map(|(i, &c)| probs[i][c]).product();
        *out.entry(collapse(&path, k - 1)).or_insert(0.0) += p;
        let mut i = 0;
        loop {
            if i == t {
                return out;
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

/// Central differences at a sample of coordinates (all of them when
/// `sample` is `None`); returns the worst `|num − ana| / max(1, |ana|)`.
pub fn fd_worst(
    mut f: impl FnMut(&Tensor) -> f64,
    at: &Tensor,
    analytic: &Tensor,
    sample: Option<(usize, &mut Rng)>,
) -> f64 {
    assert_eq!(at.shape(), analytic.shape());
    let coords: Vec<usize> = match sample {
        Some((n, rng)) if n < at.len() => (0..n).map(|_| rng.below(at.len())).collect(),
        _ => (0..at.len()).collect(),
    };
    let mut probe = at.clone();
    let mut worst = 0.0f64;
    for i in coords {
        let x = at.data()[i];
        let mid = f(&probe);
        probe.data_mut()[i] = x + EPS;
        let up = f(&probe);
        probe.data_mut()[i] = x - EPS;
        let down = f(&probe);
        probe.data_mut()[i] = x;
        let ana = analytic.data()[i];
        let err = |num: f64| (num - ana).abs() / ana.abs().max(1.0);
        // A relu or max-pool switch inside the probe interval makes the central
        // difference meaningless; the gradient must then match one side.
        let e = err((up - down) / (2.0 * EPS))
            .min(err((up - mid) / EPS))
            .min(err((mid - down) / EPS));
        worst = worst.max(e);
    }
    worst
}

/// Worst input and parameter gradient error of `net` under the objective
/// `sum(net(x) ⊙ w)` with random `x` and `w`.
pub fn check_sequential(net: &Sequential, input: &[usize], rng: &mut Rng) -> f64 {
    let x = gaussian(input, rng);
    let out_shape = net.forward(&x, Mode::Train).unwrap().output.shape().to_vec();
    let w = gaussian(&out_shape, rng);
    let objective = |n: &Sequential, x: &Tensor| n.forward(x, Mode::Train).unwrap().output.mul(&w).unwrap().sum();
    let trace = net.forward(&x, Mode::Train).unwrap();
    let (dx, grads) = net.backward(&trace, &w, true).unwrap();
    let mut worst = fd_worst(|v| objective(net, v), &x, dx.as_ref().unwrap(), None);
    let params: Vec<Tensor> = net.params().into_iter().cloned().collect();
    for (k, p) in params.iter().enumerate() {
        let e = fd_worst(
            |v| {
                let mut n = net.clone();
                *n.params_mut()[k] = v.clone();
                objective(&n, &x)
            },
            p,
            &grads[k],
            None,
        );
        worst = worst.max(e);
    }
    worst
}

pub type LayerCase = (&'static str, fn(&mut Rng) -> (Sequential, Vec<usize>));

/// One small network per layer kind, each with its input shape.
pub fn layer_cases() -> Vec<LayerCase> {
    vec![
        ("conv3x3", |r| {
            (Sequential::new(vec![Layer::Conv2d(Conv2d::new((3, 3), 2, 3, (1, 1), (1, 1), r))]), vec![2, 5, 5, 2])
        }),
        ("conv2x3-strided", |r| {
            (Sequential::new(vec![Layer::Conv2d(Conv2d::new((2, 3), 2, 3, (2, 1), (0, 1), r))]), vec![2, 6, 5, 2])
        }),
        ("pointwise", |r| {
            (Sequential::new(vec![Layer::Conv2d(Conv2d::new((1, 1), 3, 4, (1, 1), (0, 0), r))]), vec![2, 4, 4, 3])
        }),
        ("depthwise", |r| {
            (Sequential::new(vec![Layer::Depthwise(Depthwise::new((3, 3), 3, (1, 1), (1, 1), r))]), vec![2, 5, 5, 3])
        }),
        ("depthwise-strided", |r| {
            (Sequential::new(vec![Layer::Depthwise(Depthwise::new((3, 3), 2, (2, 2), (1, 1), r))]), vec![2, 6, 6, 2])
        }),
        ("batchnorm", |_| (Sequential::new(vec![Layer::BatchNorm(BatchNorm::new(3))]), vec![3, 3, 4, 3])),
        ("instancenorm", |_| (Sequential::new(vec![Layer::InstanceNorm(1e-5)]), vec![2, 3, 4, 3])),
        ("maxpool2x2", |_| {
            (Sequential::new(vec![Layer::MaxPool(MaxPool::new((2, 2), (2, 2), (0, 0)).unwrap())]), vec![2, 4, 6, 2])
        }),
        ("maxpool-height", |_| {
            (Sequential::new(vec![Layer::MaxPool(MaxPool::new((2, 2), (2, 1), (0, 1)).unwrap())]), vec![2, 4, 5, 2])
        }),
        ("relu", |_| (Sequential::new(vec![Layer::Relu]), vec![2, 3, 3, 2])),
        ("leaky-relu", |_| (Sequential::new(vec![Layer::LeakyRelu(0.2)]), vec![2, 3, 3, 2])),
        ("tanh", |_| (Sequential::new(vec![Layer::Tanh]), vec![2, 3, 3, 2])),
        ("sigmoid", |_| (Sequential::new(vec![Layer::Sigmoid]), vec![2, 3, 3, 2])),
        ("upsample", |_| (Sequential::new(vec![Layer::Upsample(2)]), vec![2, 2, 3, 2])),
        ("linear", |r| (Sequential::new(vec![Layer::Flatten, Layer::Linear(Linear::new(12, 5, r))]), vec![2, 2, 3, 2])),
        ("reshape", |r| {
            (
                Sequential::new(vec![
                    Layer::Flatten,
                    Layer::Linear(Linear::new(8, 12, r)),
                    Layer::Reshape([2, 3, 2]),
                    Layer::Tanh,
                ]),
                vec![2, 2, 2, 2],
            )
        }),
        ("residual", |r| {
            let body = Sequential::new(vec![
                Layer::Conv2d(Conv2d::new((3, 3), 2, 2, (1, 1), (1, 1), r)),
                Layer::InstanceNorm(1e-5),
                Layer::Relu,
            ]);
            (Sequential::new(vec![Layer::Residual(body)]), vec![2, 4, 4, 2])
        }),
    ]
}

/// BiLSTM over a short sequence: worst input and parameter error.
pub fn check_bilstm(rng: &mut Rng) -> f64 {
    let (t, b, d, h) = (4, 2, 3, 3);
    let net = BiLstm::new(d, h, rng);
    let seq: Vec<Tensor> = (0..t).map(|_| gaussian(&[b, d], rng)).collect();
    let ws: Vec<Tensor> = (0..t).map(|_| gaussian(&[b, 2 * h], rng)).collect();
    let objective = |n: &BiLstm, s: &[Tensor]| -> f64 {
        let (out, _) = n.forward(s).unwrap();
        out.iter().zip(&ws).map(|(o, w)| o.mul(w).unwrap().sum()).sum()
    };
    let (_, cache) = net.forward(&seq).unwrap();
    let (dx, grads) = net.backward(&cache, &ws, true).unwrap();
    let dx = dx.unwrap();
    let mut worst = 0.0f64;
    for step in 0..t {
        let e = fd_worst(
            |v| {
                let mut s = seq.clone();
                s[step] = v.clone();
                objective(&net, &s)
            },
            &seq[step],
            &dx[step],
            None,
        );
        worst = worst.max(e);
    }
    let params: Vec<Tensor> = net.params().into_iter().cloned().collect();
    for (k, p) in params.iter().enumerate() {
        let e = fd_worst(
            |v| {
                let mut n = net.clone();
                *n.params_mut()[k] = v.clone();
                objective(&n, &seq)
            },
            p,
            &grads[k],
            None,
        );
        worst = worst.max(e);
    }
    worst
}

/// Random feasible target for `t` frames over `k − 1` labels.
pub fn feasible_target(t: usize, k: usize, max_len: usize, rng: &mut Rng) -> Vec<usize> {
    loop {
        let len = 1 + rng.below(max_len);
        let target: Vec<usize> = (0..len).map(|_| rng.below(k - 1)).collect();
        let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
        if len + repeats <= t {
            return target;
        }
    }
}

/// CTC loss gradient with respect to the logits of a small batch.
pub fn check_ctc(rng: &mut Rng) -> f64 {
    let (b, t, k) = (2, 6, 5);
    let logits = gaussian(&[b, t, k], rng);
    let targets: Vec<Vec<usize>> = (0..b).map(|_| feasible_target(t, k, 3, rng)).collect();
    let (_, grad) = ctc_batch(&logits, &targets).unwrap();
    fd_worst(|v| ctc_batch(v, &targets).unwrap().0, &logits, &grad, None)
}

/// Toy CRNN end to end under CTC: the input gradient is checked through a
/// parameter-free probe (the image), parameters at sampled coordinates.
pub fn check_crnn(rng: &mut Rng) -> f64 {
    let model = build_crnn(&NetworkSpec::crnn_toy(3, 17), rng).unwrap();
    let x = Tensor::random(&[2, 16, 64, 3], Dist::Uniform { low: 0.0, high: 1.0 }, rng).unwrap();
    let labels: Vec<Vec<usize>> = (0..2).map(|_| (0..5).map(|_| rng.below(16)).collect()).collect();
    let loss = |m: &platerec::layers::Recognizer| {
        let (l, _) = m.forward(&x, Mode::Train).unwrap();
        ctc_batch(&l, &labels).unwrap().0
    };
    let (logits, trace) = model.forward(&x, Mode::Train).unwrap();
    let (_, dlogits) = ctc_batch(&logits, &labels).unwrap();
    let grads = model.backward(&trace, &dlogits).unwrap();
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut worst = 0.0f64;
    let mut pick = Rng::new(rng.next_u64());
    for (k, p) in params.iter().enumerate() {
        let e = fd_worst(
            |v| {
                let mut m = model.clone();
                *m.params_mut()[k] = v.clone();
                loss(&m)
            },
            p,
            &grads[k],
            Some((6, &mut pick)),
        );
        worst = worst.max(e);
    }
    worst
}

/// Output height/width of a convolution or pool, the textbook way.
pub fn out_len(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}
