//! Convolutional-recurrent recognizers: a conv stack whose output columns feed
//! two bidirectional LSTMs and a per-frame linear classifier.
//!
//! Geometry is always `H×W×C` (height first). The paper-scale input is
//! 48 high by 160 wide; both the CRNN and LightCRNN stacks end at `H'=1`,
//! `W'=40`, so `T=40` frames.

use crate::error::{Error, Result};
use crate::layers::lstm::BiLstmCache;
use crate::layers::{BatchNorm, BiLstm, Conv2d, Depthwise, Layer, Linear, MaxPool, Mode, Sequential, Trace};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkKind {
    Crnn,
    LightCrnn,
}

impl NetworkKind {
    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::Crnn => "crnn",
            NetworkKind::LightCrnn => "lightcrnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "crnn" => Some(NetworkKind::Crnn),
            "lightcrnn" => Some(NetworkKind::LightCrnn),
            _ => None,
        }
    }
}

/// One record of the convolutional part. Every convolution is followed by an
/// optional batch norm and a ReLU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        input: usize,
        output: usize,
        stride: usize,
        pad: usize,
        bn: bool,
    },
    Depthwise {
        kernel: usize,
        depth: usize,
        stride: usize,
        pad: usize,
        bn: bool,
    },
    Pool {
        window: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    },
}

impl LayerSpec {
    fn conv(kernel: usize, input: usize, output: usize, pad: usize, bn: bool) -> Self {
        LayerSpec::Conv {
            kernel,
            input,
            output,
            stride: 1,
            pad,
            bn,
        }
    }

    fn dw(kernel: usize, depth: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Depthwise {
            kernel,
            depth,
            stride,
            pad,
            bn: true,
        }
    }

    fn pool_half() -> Self {
        LayerSpec::Pool {
            window: (2, 2),
            stride: (2, 2),
            pad: (0, 0),
        }
    }

    /// Halves the height only; the width grows by one because of the padding.
    fn pool_height() -> Self {
        LayerSpec::Pool {
            window: (2, 2),
            stride: (2, 1),
            pad: (0, 1),
        }
    }

    fn to_line(self) -> String {
        match self {
            LayerSpec::Conv {
                kernel,
                input,
                output,
                stride,
                pad,
                bn,
            } => format!("conv {kernel} {input} {output} {stride} {pad} {}", bn as u8),
            LayerSpec::Depthwise {
                kernel,
                depth,
                stride,
                pad,
                bn,
            } => format!("dw {kernel} {depth} {stride} {pad} {}", bn as u8),
            LayerSpec::Pool { window, stride, pad } => format!(
                "pool {} {} {} {} {} {}",
                window.0, window.1, stride.0, stride.1, pad.0, pad.1
            ),
        }
    }

    fn from_line(line: &str) -> Option<Self> {
        let mut it = line.split_whitespace();
        let tag = it.next()?;
        let nums: Vec<usize> = it.map(|t| t.parse().ok()).collect::<Option<_>>()?;
        match (tag, nums.as_slice()) {
            ("conv", &[kernel, input, output, stride, pad, bn]) => Some(LayerSpec::Conv {
                kernel,
                input,
                output,
                stride,
                pad,
                bn: bn != 0,
            }),
            ("dw", &[kernel, depth, stride, pad, bn]) => Some(LayerSpec::Depthwise {
                kernel,
                depth,
                stride,
                pad,
                bn: bn != 0,
            }),
            ("pool", &[a, b, c, d, e, f]) => Some(LayerSpec::Pool {
                window: (a, b),
                stride: (c, d),
                pad: (e, f),
            }),
            _ => None,
        }
    }
}

/// Declarative description of a recognizer.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    /// `[H, W, C]`.
    pub input: [usize; 3],
    /// Output classes including the blank.
    pub classes: usize,
    pub alpha: f64,
    pub convs: Vec<LayerSpec>,
    /// Hidden units per LSTM direction.
    pub hidden: usize,
    pub lstm_layers: usize,
}

impl NetworkSpec {
    /// The 8-conv CRNN on 48×160×3 input.
    pub fn crnn_paper(classes: usize) -> Self {
        use LayerSpec as L;
        NetworkSpec {
            kind: NetworkKind::Crnn,
            input: [48, 160, 3],
            classes,
            alpha: 1.0,
            convs: vec![
                L::conv(3, 3, 64, 1, false),
                L::pool_half(),
                L::conv(3, 64, 128, 1, false),
                L::pool_half(),
                L::conv(3, 128, 256, 1, true),
                L::conv(3, 256, 256, 1, false),
                L::pool_height(),
                L::conv(3, 256, 512, 1, true),
                L::conv(3, 512, 512, 1, false),
                L::pool_height(),
                L::conv(2, 512, 512, 0, true),
                L::conv(2, 512, 512, 0, true),
            ],
            hidden: 256,
            lstm_layers: 2,
        }
    }

    /// Four convs on 16×64 input, T=16.
    pub fn crnn_toy(channels: usize, classes: usize) -> Self {
        use LayerSpec as L;
        NetworkSpec {
            kind: NetworkKind::Crnn,
            input: [16, 64, channels],
            classes,
            alpha: 1.0,
            convs: vec![
                L::conv(3, channels, 8, 1, false),
                L::pool_half(),
                L::conv(3, 8, 16, 1, false),
                L::pool_half(),
                L::conv(3, 16, 32, 1, true),
                L::pool_height(),
                L::conv(2, 32, 32, 0, true),
            ],
            hidden: 32,
            lstm_layers: 2,
        }
    }

    /// The separable stack with α=1 depths; scale with [`build_lightcrnn`].
    pub fn lightcrnn_paper(classes: usize) -> Self {
        use LayerSpec as L;
        NetworkSpec {
            kind: NetworkKind::LightCrnn,
            input: [48, 160, 3],
            classes,
            alpha: 1.0,
            convs: vec![
                L::conv(3, 3, 64, 1, true),
                L::dw(3, 64, 2, 1),
                L::conv(1, 64, 128, 0, true),
                L::dw(3, 128, 2, 1),
                L::conv(1, 128, 256, 0, true),
                L::pool_height(),
                L::dw(3, 256, 1, 1),
                L::conv(1, 256, 512, 0, true),
                L::pool_height(),
                L::dw(2, 512, 1, 0),
                L::conv(1, 512, 512, 0, true),
                L::dw(2, 512, 1, 0),
                L::conv(1, 512, 512, 0, true),
            ],
            hidden: 256,
            lstm_layers: 2,
        }
    }

    pub fn lightcrnn_toy(channels: usize, classes: usize) -> Self {
        use LayerSpec as L;
        NetworkSpec {
            kind: NetworkKind::LightCrnn,
            input: [16, 64, channels],
            classes,
            alpha: 1.0,
            convs: vec![
                L::conv(3, channels, 8, 1, true),
                L::dw(3, 8, 2, 1),
                L::conv(1, 8, 16, 0, true),
                L::dw(3, 16, 2, 1),
                L::conv(1, 16, 32, 0, true),
                L::pool_height(),
                L::dw(2, 32, 1, 0),
                L::conv(1, 32, 32, 0, true),
            ],
            hidden: 32,
            lstm_layers: 2,
        }
    }

    pub fn to_lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("kind {}", self.kind.name()),
            format!("input {} {} {}", self.input[0], self.input[1], self.input[2]),
            format!("classes {}", self.classes),
            format!("alpha {}", self.alpha),
            format!("hidden {}", self.hidden),
            format!("lstm_layers {}", self.lstm_layers),
        ];
        out.extend(self.convs.iter().map(|c| format!("layer {}", c.to_line())));
        out
    }

    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let bad = |l: &str| Error::Checkpoint(format!("bad network line `{l}`"));
        let mut kind = None;
        let mut input = None;
        let (mut classes, mut alpha, mut hidden, mut lstm_layers) = (None, None, None, None);
        let mut convs = Vec::new();
        for line in lines {
            let (key, rest) = line.split_once(' ').ok_or_else(|| bad(line))?;
            match key {
                "kind" => kind = Some(NetworkKind::parse(rest).ok_or_else(|| bad(line))?),
                "input" => {
                    let v: Vec<usize> = rest.split_whitespace().map(|t| t.parse().map_err(|_| bad(line))).collect::<Result<_>>()?;
                    if v.len() != 3 {
                        return Err(bad(line));
                    }
                    input = Some([v[0], v[1], v[2]]);
                }
                "classes" => classes = Some(rest.parse().map_err(|_| bad(line))?),
                "alpha" => alpha = Some(rest.parse().map_err(|_| bad(line))?),
                "hidden" => hidden = Some(rest.parse().map_err(|_| bad(line))?),
                "lstm_layers" => lstm_layers = Some(rest.parse().map_err(|_| bad(line))?),
                "layer" => convs.push(LayerSpec::from_line(rest).ok_or_else(|| bad(line))?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::Checkpoint(format!("network description lacks `{k}`"));
        Ok(NetworkSpec {
            kind: kind.ok_or_else(|| missing("kind"))?,
            input: input.ok_or_else(|| missing("input"))?,
            classes: classes.ok_or_else(|| missing("classes"))?,
            alpha: alpha.ok_or_else(|| missing("alpha"))?,
            convs,
            hidden: hidden.ok_or_else(|| missing("hidden"))?,
            lstm_layers: lstm_layers.ok_or_else(|| missing("lstm_layers"))?,
        })
    }
}

/// Round-half-up channel scaling with a floor of one channel.
pub fn scale_depth(depth: usize, alpha: f64) -> usize {
    ((depth as f64 * alpha + 0.5).floor() as usize).max(1)
}

/// Splits a feature map into one vector per column.
///
/// For `[H', W', C]` input the result has `W'` vectors of length `H'·C`; for
/// batched `[B, H', W', C]` input each entry is `[B, H'·C]`. Within a column
/// the values are ordered row by row, channels fastest.
pub fn feature_sequence(map: &Tensor) -> Result<Vec<Tensor>> {
    let (b, h, w, c, batched) = match *map.shape() {
        [h, w, c] => (1, h, w, c, false),
        [b, h, w, c] => (b, h, w, c, true),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "feature map must be [H,W,C] or [B,H,W,C], got {:?}",
                map.shape()
            )))
        }
    };
    let d = map.data();
    let n = h * c;
    let mut out = Vec::with_capacity(w);
    for t in 0..w {
        let mut v = Vec::with_capacity(b * n);
        for s in 0..b {
            for y in 0..h {
                let base = ((s * h + y) * w + t) * c;
                v.extend_from_slice(&d[base..base + c]);
            }
        }
        let shape: Vec<usize> = if batched { vec![b, n] } else { vec![n] };
        out.push(Tensor::from_vec(&shape, v)?);
    }
    Ok(out)
}

/// Inverse of [`feature_sequence`] for gradients.
fn fold_sequence(seq: &[Tensor], shape: &[usize]) -> Result<Tensor> {
    let [b, h, w, c] = *shape else {
        return Err(Error::ShapeMismatch("fold expects a batched map shape".into()));
    };
    if seq.len() != w {
        return Err(Error::ShapeMismatch("sequence length differs from map width".into()));
    }
    let mut out = vec![0.0; b * h * w * c];
    for (t, v) in seq.iter().enumerate() {
        let vd = v.data();
        for s in 0..b {
            for y in 0..h {
                let src = (s * h + y) * c;
                let dst = ((s * h + y) * w + t) * c;
                out[dst..dst + c].copy_from_slice(&vd[src..src + c]);
            }
        }
    }
    Tensor::from_vec(shape, out)
}

fn conv_layers(convs: &[LayerSpec], rng: &mut Rng) -> Sequential {
    let mut seq = Sequential::default();
    for spec in convs {
        match *spec {
            LayerSpec::Conv {
                kernel,
                input,
                output,
                stride,
                pad,
                bn,
            } => {
                seq.push(Layer::Conv2d(Conv2d::new(
                    (kernel, kernel),
                    input,
                    output,
                    (stride, stride),
                    (pad, pad),
                    rng,
                )));
                if bn {
                    seq.push(Layer::BatchNorm(BatchNorm::new(output)));
                }
                seq.push(Layer::Relu);
            }
            LayerSpec::Depthwise {
                kernel,
                depth,
                stride,
                pad,
                bn,
            } => {
                seq.push(Layer::Depthwise(Depthwise::new(
                    (kernel, kernel),
                    depth,
                    (stride, stride),
                    (pad, pad),
                    rng,
                )));
                if bn {
                    seq.push(Layer::BatchNorm(BatchNorm::new(depth)));
                }
                seq.push(Layer::Relu);
            }
            LayerSpec::Pool { window, stride, pad } => {
                seq.push(Layer::MaxPool(MaxPool { window, stride, pad }));
            }
        }
    }
    seq
}

/// Checks that consecutive records compose; errors carry the record index.
fn validate(spec: &NetworkSpec) -> Result<[usize; 3]> {
    if spec.classes < 2 {
        return Err(Error::Build {
            index: 0,
            reason: "need at least one label class plus the blank".into(),
        });
    }
    if spec.hidden == 0 || spec.lstm_layers == 0 {
        return Err(Error::Build {
            index: spec.convs.len(),
            reason: "recurrent stack must be non-empty".into(),
        });
    }
    let [mut h, mut w, mut c] = spec.input;
    for (index, layer) in spec.convs.iter().enumerate() {
        let err = |reason: String| Error::Build { index, reason };
        match *layer {
            LayerSpec::Conv {
                kernel,
                input,
                output,
                stride,
                pad,
                ..
            } => {
                if input != c {
                    return Err(err(format!("conv expects input depth {input}, previous layer gives {c}")));
                }
                if kernel == 0 || output == 0 || stride == 0 {
                    return Err(err("conv kernel, depth and stride must be at least 1".into()));
                }
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(err(format!("{kernel}x{kernel} kernel does not fit {h}x{w} map")));
                }
                h = (h + 2 * pad - kernel) / stride + 1;
                w = (w + 2 * pad - kernel) / stride + 1;
                c = output;
            }
            LayerSpec::Depthwise {
                kernel,
                depth,
                stride,
                pad,
                ..
            } => {
                if depth != c {
                    return Err(err(format!("depthwise over {depth} channels, previous layer gives {c}")));
                }
                if kernel == 0 || stride == 0 {
                    return Err(err("depthwise kernel and stride must be at least 1".into()));
                }
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(err(format!("{kernel}x{kernel} kernel does not fit {h}x{w} map")));
                }
                h = (h + 2 * pad - kernel) / stride + 1;
                w = (w + 2 * pad - kernel) / stride + 1;
            }
            LayerSpec::Pool { window, stride, pad } => {
                let pool = MaxPool::new(window, stride, pad).map_err(|e| err(e.to_string()))?;
                let (ho, wo) = pool.output_hw(h, w).map_err(|e| err(e.to_string()))?;
                h = ho;
                w = wo;
            }
        }
    }
    Ok([h, w, c])
}

fn assemble(spec: NetworkSpec, rng: &mut Rng) -> Result<Recognizer> {
    let [h, w, c] = validate(&spec)?;
    let cnn = conv_layers(&spec.convs, rng);
    let mut rnn = Vec::with_capacity(spec.lstm_layers);
    let mut dim = h * c;
    for _ in 0..spec.lstm_layers {
        let bi = BiLstm::new(dim, spec.hidden, rng);
        dim = bi.output_dim();
        rnn.push(bi);
    }
    let fc = Linear::new(dim, spec.classes, rng);
    Ok(Recognizer {
        spec,
        cnn,
        rnn,
        fc,
        feature_map: [h, w, c],
    })
}

/// Builds the network described by `spec` as given.
pub fn build_crnn(spec: &NetworkSpec, rng: &mut Rng) -> Result<Recognizer> {
    assemble(spec.clone(), rng)
}

/// Builds `spec` with every conv depth multiplied by `alpha` (see
/// [`scale_depth`]); the image channels, the LSTMs and the classifier are
/// left unchanged.
pub fn build_lightcrnn(spec: &NetworkSpec, alpha: f64, rng: &mut Rng) -> Result<Recognizer> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidMultiplier(alpha));
    }
    let image_c = spec.input[2];
    let scale_in = |d: usize, first: bool| if first && d == image_c { d } else { scale_depth(d, alpha) };
    let mut scaled = spec.clone();
    scaled.alpha = spec.alpha * alpha;
    let mut first = true;
    for layer in scaled.convs.iter_mut() {
        match layer {
            LayerSpec::Conv { input, output, .. } => {
                *input = scale_in(*input, first);
                *output = scale_depth(*output, alpha);
                first = false;
            }
            LayerSpec::Depthwise { depth, .. } => {
                *depth = scale_in(*depth, first);
                first = false;
            }
            LayerSpec::Pool { .. } => {}
        }
    }
    assemble(scaled, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recognizer {
    pub spec: NetworkSpec,
    pub cnn: Sequential,
    pub rnn: Vec<BiLstm>,
    pub fc: Linear,
    feature_map: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct RecognizerTrace {
    cnn: Trace,
    rnn: Vec<BiLstmCache>,
    fc_input: Tensor,
    batch: usize,
}

impl Recognizer {
    /// Frame count `T` of the output sequence.
    pub fn frames(&self) -> usize {
        self.feature_map[1]
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn blank(&self) -> usize {
        self.spec.classes - 1
    }

    /// `[H', W', C]` of the last conv feature map.
    pub fn feature_map(&self) -> [usize; 3] {
        self.feature_map
    }

    /// Logits `[B, T, classes]`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, RecognizerTrace)> {
        let x = self.batched(x)?;
        let b = x.shape()[0];
        let cnn = self.cnn.forward(&x, mode)?;
        let mut seq = feature_sequence(&cnn.output)?;
        let mut caches = Vec::with_capacity(self.rnn.len());
        for bi in &self.rnn {
            let (out, cache) = bi.forward(&seq)?;
            caches.push(cache);
            seq = out;
        }
        let fc_input = stack_rows(&seq)?;
        let rows = self.fc.forward(&fc_input)?;
        let logits = time_major_to_batch(&rows, seq.len(), b)?;
        Ok((
            logits,
            RecognizerTrace {
                cnn,
                rnn: caches,
                fc_input,
                batch: b,
            },
        ))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.batched(x)?;
        let b = x.shape()[0];
        let map = self.cnn.infer(&x)?;
        let mut seq = feature_sequence(&map)?;
        for bi in &self.rnn {
            seq = bi.forward(&seq)?.0;
        }
        let rows = self.fc.forward(&stack_rows(&seq)?)?;
        time_major_to_batch(&rows, seq.len(), b)
    }

    /// Gradients in [`Recognizer::params`] order for `dlogits` shaped like the logits.
    pub fn backward(&self, trace: &RecognizerTrace, dlogits: &Tensor) -> Result<Vec<Tensor>> {
        let t_len = self.frames();
        let b = trace.batch;
        if dlogits.shape() != [b, t_len, self.classes()] {
            return Err(Error::ShapeMismatch(format!(
                "logit gradient {:?}, expected [{b}, {t_len}, {}]",
                dlogits.shape(),
                self.classes()
            )));
        }
        let drows = batch_to_time_major(dlogits)?;
        let (dfc_in, fc_grads) = self.fc.backward(&trace.fc_input, &drows, true)?;
        let dfc_in = dfc_in.expect("requested");
        let width = dfc_in.shape()[1];
        let mut dseq: Vec<Tensor> = dfc_in
            .data()
            .chunks(b * width)
            .map(|c| Tensor::from_vec(&[b, width], c.to_vec()))
            .collect::<Result<_>>()?;
        let mut rnn_grads = Vec::with_capacity(self.rnn.len());
        for (bi, cache) in self.rnn.iter().zip(&trace.rnn).rev() {
            let (dx, g) = bi.backward(cache, &dseq, true)?;
            dseq = dx.expect("requested");
            rnn_grads.push(g);
        }
        rnn_grads.reverse();
        let dmap = fold_sequence(&dseq, trace.cnn.output.shape())?;
        let (_, mut grads) = self.cnn.backward(&trace.cnn, &dmap, false)?;
        grads.extend(rnn_grads.into_iter().flatten());
        grads.extend(fc_grads);
        Ok(grads)
    }

    pub fn commit(&mut self, trace: &RecognizerTrace) {
        self.cnn.commit(&trace.cnn);
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.cnn.params();
        for bi in &self.rnn {
            p.extend(bi.params());
        }
        p.push(&self.fc.weight);
        p.push(&self.fc.bias);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.cnn.params_mut();
        for bi in self.rnn.iter_mut() {
            p.extend(bi.params_mut());
        }
        p.push(&mut self.fc.weight);
        p.push(&mut self.fc.bias);
        p
    }

    pub fn buffers(&self) -> Vec<&Tensor> {
        self.cnn.buffers()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        self.cnn.buffers_mut()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Human-readable per-layer listing with output shapes, ending in the
    /// frame sequence.
    pub fn summary(&self) -> Result<Vec<String>> {
        let shapes = self.cnn.layer_shapes(&self.spec.input)?;
        let mut lines: Vec<String> = self
            .cnn
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| format!("{:<28} -> {:?}", l.describe(), s))
            .collect();
        let [h, _, c] = self.feature_map;
        lines.push(format!("{:<28} -> {} x [{}]", "columns", self.frames(), h * c));
        for bi in &self.rnn {
            lines.push(format!(
                "{:<28} -> {} x [{}]",
                format!("bilstm {}", bi.hidden()),
                self.frames(),
                bi.output_dim()
            ));
        }
        lines.push(format!(
            "{:<28} -> {} x [{}]",
            format!("linear {}->{}", self.fc.input_dim(), self.fc.output_dim()),
            self.frames(),
            self.classes()
        ));
        Ok(lines)
    }

    fn batched(&self, x: &Tensor) -> Result<Tensor> {
        let want = self.spec.input;
        match *x.shape() {
            [h, w, c] if [h, w, c] == want => x.clone().reshape(&[1, h, w, c]),
            [_, h, w, c] if [h, w, c] == want => Ok(x.clone()),
            _ => Err(Error::ShapeMismatch(format!(
                "recognizer expects {:?} images, got {:?}",
                want,
                x.shape()
            ))),
        }
    }
}

/// One sample's `[T, classes]` logits out of a `[B, T, classes]` batch.
pub fn sample_logits(logits: &Tensor, index: usize) -> Result<Tensor> {
    let [b, t, k] = *logits.shape() else {
        return Err(Error::ShapeMismatch(format!("logits must be [B,T,K], got {:?}", logits.shape())));
    };
    if index >= b {
        return Err(Error::InvalidArgument(format!("sample {index} of a batch of {b}")));
    }
    Tensor::from_vec(&[t, k], logits.data()[index * t * k..(index + 1) * t * k].to_vec())
}

fn stack_rows(seq: &[Tensor]) -> Result<Tensor> {
    let b = seq[0].shape()[0];
    let n = seq[0].shape()[1];
    let mut data = Vec::with_capacity(seq.len() * b * n);
    for s in seq {
        data.extend_from_slice(s.data());
    }
    Tensor::from_vec(&[seq.len() * b, n], data)
}

fn time_major_to_batch(rows: &Tensor, t_len: usize, b: usize) -> Result<Tensor> {
    let k = rows.shape()[1];
    let mut out = vec![0.0; b * t_len * k];
    let d = rows.data();
    for t in 0..t_len {
        for s in 0..b {
            let src = (t * b + s) * k;
            let dst = (s * t_len + t) * k;
            out[dst..dst + k].copy_from_slice(&d[src..src + k]);
        }
    }
    Tensor::from_vec(&[b, t_len, k], out)
}

fn batch_to_time_major(x: &Tensor) -> Result<Tensor> {
    let [b, t_len, k] = *x.shape() else {
        return Err(Error::ShapeMismatch("expected [B,T,K]".into()));
    };
    let mut out = vec![0.0; b * t_len * k];
    let d = x.data();
    for s in 0..b {
        for t in 0..t_len {
            let src = (s * t_len + t) * k;
            let dst = (t * b + s) * k;
            out[dst..dst + k].copy_from_slice(&d[src..src + k]);
        }
    }
    Tensor::from_vec(&[t_len * b, k], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, Dist};

    #[test]
    fn paper_crnn_geometry() {
        let spec = NetworkSpec::crnn_paper(68);
        assert_eq!(validate(&spec).unwrap(), [1, 40, 512]);
        let light = NetworkSpec::lightcrnn_paper(68);
        assert_eq!(validate(&light).unwrap(), [1, 40, 512]);
    }

    #[test]
    fn toy_crnn_builds() {
        let mut rng = Rng::new(1);
        for c in [1, 3] {
            let net = build_crnn(&NetworkSpec::crnn_toy(c, 17), &mut rng).unwrap();
            assert_eq!(net.frames(), 16);
            assert_eq!(net.feature_map(), [1, 16, 32]);
            let x = Tensor::zeros(&[2, 16, 64, c]);
            let y = net.infer(&x).unwrap();
            assert_eq!(y.shape(), &[2, 16, 17]);
        }
    }

    #[test]
    fn mismatched_depth_names_the_layer() {
        let mut spec = NetworkSpec::crnn_toy(3, 17);
        if let LayerSpec::Conv { input, .. } = &mut spec.convs[2] {
            *input = 4;
        }
        let mut rng = Rng::new(1);
        match build_crnn(&spec, &mut rng) {
            Err(Error::Build { index, reason }) => {
                assert_eq!(index, 2);
                assert!(reason.contains("depth"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn width_multiplier() {
        let mut rng = Rng::new(2);
        let spec = NetworkSpec::lightcrnn_toy(3, 17);
        let a = build_lightcrnn(&spec, 1.0, &mut rng).unwrap();
        let b = build_lightcrnn(&spec, 1.2, &mut rng).unwrap();
        let q = build_lightcrnn(&spec, 0.25, &mut rng).unwrap();
        match (a.spec.convs[2], b.spec.convs[2]) {
            (LayerSpec::Conv { output: o1, .. }, LayerSpec::Conv { output: o2, .. }) => {
                assert_eq!(o1, 16);
                assert_eq!(o2, scale_depth(16, 1.2));
                assert_eq!(o2, 19);
            }
            _ => unreachable!(),
        }
        assert!(q.param_count() < a.param_count());
        assert_eq!(q.frames(), a.frames());
        assert!(matches!(build_lightcrnn(&spec, 0.0, &mut rng), Err(Error::InvalidMultiplier(_))));
        assert!(matches!(build_lightcrnn(&spec, -1.0, &mut rng), Err(Error::InvalidMultiplier(_))));
        assert_eq!(scale_depth(3, 0.1), 1);
        assert_eq!(scale_depth(5, 0.5), 3);
    }

    #[test]
    fn feature_sequence_shapes_and_locality() {
        let v = feature_sequence(&Tensor::zeros(&[1, 5, 64])).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.iter().all(|t| t.shape() == [64]));
        let mut rng = Rng::new(3);
        let m = Tensor::random(&[2, 3, 4], Dist::Uniform { low: 0.0, high: 1.0 }, &mut rng).unwrap();
        let a = feature_sequence(&m).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|t| t.shape() == [8]));
        let mut p = m.clone();
        for y in 0..2 {
            for c in 0..4 {
                p.data_mut()[(y * 3 + 2) * 4 + c] += 1.0;
            }
        }
        let b = feature_sequence(&p).unwrap();
        for t in 0..3 {
            assert_eq!(a[t] == b[t], t != 2);
        }
    }

    #[test]
    fn checkpoint_lines_round_trip() {
        for spec in [NetworkSpec::crnn_paper(68), NetworkSpec::lightcrnn_toy(3, 17)] {
            let lines = spec.to_lines();
            let back = NetworkSpec::from_lines(lines.iter().map(|s| s.as_str())).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn toy_end_to_end_gradients() {
        let mut rng = Rng::new(8);
        let mut spec = NetworkSpec::crnn_toy(1, 5);
        spec.hidden = 3;
        let net = build_crnn(&spec, &mut rng).unwrap();
        let x = Tensor::random(&[2, 16, 64, 1], Dist::Uniform { low: 0.0, high: 1.0 }, &mut rng).unwrap();
        let w = Tensor::random(&[2, 16, 5], Dist::Gaussian { mean: 0.0, std: 1.0 }, &mut rng).unwrap();
        let (_, trace) = net.forward(&x, Mode::Train).unwrap();
        let grads = net.backward(&trace, &w).unwrap();
        let loss = |n: &Recognizer| n.forward(&x, Mode::Train).unwrap().0.mul(&w).unwrap().sum();
        let params: Vec<Tensor> = net.params().into_iter().cloned().collect();
        assert_eq!(params.len(), grads.len());
        // Spot-check a spread of parameter tensors; the full sweep lives in the
        // integration tests.
        for k in [0, 3, params.len() - 8, params.len() - 1] {
            let err = finite_diff_check(
                |v| {
                    let mut n = net.clone();
                    *n.params_mut()[k] = v.clone();
                    loss(&n)
                },
                &params[k],
                &grads[k],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "param {k}: {err}");
        }
    }
}
