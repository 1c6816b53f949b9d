//! Multiply-accumulate counts for standard and depthwise-separable
//! convolutions, closed form and measured on built networks.
//!
//! One MAC is one multiply plus one accumulate. Pooling, activations and
//! normalization are not counted. Output geometry is the layer's actual
//! output size.

use std::fmt::Write as _;

use crate::error::Result;
use crate::layers::{scale_depth, Layer, Recognizer, Sequential};

/// `F·F·M·N·H·W`.
pub fn conv_cost_standard(f: u64, m: u64, n: u64, h: u64, w: u64) -> u64 {
    f * f * m * n * h * w
}

/// `F·F·αM·H·W + αM·αN·H·W`, with `αM` and `αN` rounded as the network
/// builder rounds them.
pub fn conv_cost_separable(f: u64, m: u64, n: u64, h: u64, w: u64, alpha: f64) -> u64 {
    let am = scale_depth(m as usize, alpha) as u64;
    let an = scale_depth(n as usize, alpha) as u64;
    f * f * am * h * w + am * an * h * w
}

/// Separable over standard cost: `α/N + α²/F²`.
pub fn cost_ratio(f: u64, n: u64, alpha: f64) -> f64 {
    alpha / n as f64 + alpha * alpha / (f * f) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Standard,
    Depthwise,
    Pointwise,
    Dense,
}

impl ConvKind {
    pub fn name(self) -> &'static str {
        match self {
            ConvKind::Standard => "standard",
            ConvKind::Depthwise => "depthwise",
            ConvKind::Pointwise => "pointwise",
            ConvKind::Dense => "dense",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCost {
    /// Position in the flattened layer walk (residual bodies inlined).
    pub index: usize,
    pub kind: ConvKind,
    pub describe: String,
    /// Kernel size, input depth, output depth.
    pub kernel: usize,
    pub input: usize,
    pub output: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostBreakdown {
    pub layers: Vec<LayerCost>,
    pub standard: u64,
    /// Depthwise plus pointwise layers.
    pub separable: u64,
    pub dense: u64,
}

impl CostBreakdown {
    pub fn conv_total(&self) -> u64 {
        self.standard + self.separable
    }

    pub fn total(&self) -> u64 {
        self.conv_total() + self.dense
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>3}  {:<10} {:>2} {:>5} {:>5} {:>8} {:>14}  {}\n",
            "#", "kind", "F", "M", "N", "HxW", "MACs", "layer"
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:>3}  {:<10} {:>2} {:>5} {:>5} {:>8} {:>14}  {}",
                l.index,
                l.kind.name(),
                l.kernel,
                l.input,
                l.output,
                format!("{}x{}", l.out_h, l.out_w),
                l.macs,
                l.describe
            );
        }
        let _ = writeln!(s, "standard conv MACs  {}", self.standard);
        let _ = writeln!(s, "separable conv MACs {}", self.separable);
        let _ = writeln!(s, "dense MACs          {}", self.dense);
        let _ = writeln!(s, "conv total          {}", self.conv_total());
        s
    }
}

fn walk(net: &Sequential, shape: &[usize], out: &mut Vec<LayerCost>) -> Result<Vec<usize>> {
    let mut shape = shape.to_vec();
    for layer in &net.layers {
        let next = layer.output_shape(&shape)?;
        let index = out.len();
        let (h, w) = (next.first().copied().unwrap_or(1), next.get(1).copied().unwrap_or(1));
        match layer {
            Layer::Conv2d(c) => {
                let (kh, _, m, n) = c.dims();
                out.push(LayerCost {
                    index,
                    kind: if kh == 1 && c.dims().1 == 1 { ConvKind::Pointwise } else { ConvKind::Standard },
                    describe: layer.describe(),
                    kernel: kh,
                    input: m,
                    output: n,
                    out_h: h,
                    out_w: w,
                    macs: layer.macs(&shape)?,
                });
            }
            Layer::Depthwise(d) => {
                let (kh, _, m) = d.dims();
                out.push(LayerCost {
                    index,
                    kind: ConvKind::Depthwise,
                    describe: layer.describe(),
                    kernel: kh,
                    input: m,
                    output: m,
                    out_h: h,
                    out_w: w,
                    macs: layer.macs(&shape)?,
                });
            }
            Layer::Linear(l) => out.push(LayerCost {
                index,
                kind: ConvKind::Dense,
                describe: layer.describe(),
                kernel: 1,
                input: l.input_dim(),
                output: l.output_dim(),
                out_h: 1,
                out_w: 1,
                macs: layer.macs(&shape)?,
            }),
            Layer::Residual(body) => {
                walk(body, &shape, out)?;
            }
            _ => {}
        }
        shape = next;
    }
    Ok(shape)
}

/// Per-layer MACs of `net` on one `[H, W, C]` input.
pub fn count_macs(net: &Sequential, input: &[usize]) -> Result<CostBreakdown> {
    let mut layers = Vec::new();
    walk(net, input, &mut layers)?;
    let sum = |pred: &dyn Fn(ConvKind) -> bool| layers.iter().filter(|l| pred(l.kind)).map(|l| l.macs).sum();
    Ok(CostBreakdown {
        standard: sum(&|k| k == ConvKind::Standard),
        separable: sum(&|k| matches!(k, ConvKind::Depthwise | ConvKind::Pointwise)),
        dense: sum(&|k| k == ConvKind::Dense),
        layers,
    })
}

/// Convolutional MACs of a recognizer's feature extractor, plus the
/// recurrent and output layers under `dense`.
pub fn count_recognizer_macs(model: &Recognizer) -> Result<CostBreakdown> {
    let mut b = count_macs(&model.cnn, &model.spec.input)?;
    let t = model.frames() as u64;
    let mut x = model.feature_map()[0] * model.feature_map()[2];
    for bi in &model.rnn {
        let h = bi.hidden();
        // Both directions: input and recurrent products for four gates.
        b.dense += t * 2 * ((x * 4 * h) + (h * 4 * h)) as u64;
        x = bi.output_dim();
    }
    b.dense += t * (model.fc.input_dim() * model.fc.output_dim()) as u64;
    Ok(b)
}
