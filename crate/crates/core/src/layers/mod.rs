//! Layers with explicit forward caches and analytic backward passes.
//!
//! Forward passes never mutate the network. Batch-norm running statistics are
//! folded in afterwards with [`Sequential::commit`], which keeps gradient
//! checks and evaluation side-effect free.

pub mod checkpoint;
pub mod conv;
pub mod linear;
pub mod lstm;
pub mod norm;
pub mod pool;
pub mod recognizer;

pub use conv::{Conv2d, Depthwise};
pub use linear::Linear;
pub use lstm::{bilstm_forward, lstm_cell_backward, lstm_cell_step, BiLstm, LstmCell};
pub use norm::{batchnorm_forward, instance_norm_backward, instance_norm_forward, BatchNorm, BnCache};
pub use pool::MaxPool;
pub use recognizer::{
    build_crnn, build_lightcrnn, feature_sequence, sample_logits, scale_depth, LayerSpec, NetworkKind, NetworkSpec,
    Recognizer,
};

use crate::error::{Error, Result};
use crate::layers::conv::batch_dims;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Depthwise(Depthwise),
    BatchNorm(BatchNorm),
    /// Parameter-free instance normalization with the given epsilon.
    InstanceNorm(f64),
    MaxPool(MaxPool),
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    /// Nearest-neighbour upsampling by an integer factor in both directions.
    Upsample(usize),
    Linear(Linear),
    /// `[B, H, W, C]` to `[B, H·W·C]`.
    Flatten,
    /// `[B, n]` to `[B, h, w, c]`.
    Reshape([usize; 3]),
    /// `y = x + body(x)`.
    Residual(Sequential),
}

#[derive(Clone, Debug)]
enum Aux {
    None,
    Output(Tensor),
    Bn(BnCache),
    Inst(Tensor, Vec<f64>),
    Pool(Vec<usize>),
    Residual(Box<Trace>),
}

#[derive(Clone, Debug)]
pub struct Cache {
    input: Tensor,
    aux: Aux,
}

/// Everything recorded by [`Sequential::forward`].
#[derive(Clone, Debug)]
pub struct Trace {
    caches: Vec<Cache>,
    pub output: Tensor,
}

fn upsample(x: &Tensor, k: usize) -> Result<Tensor> {
    let (b, h, w, c) = batch_dims(x, "upsample")?;
    let (ho, wo) = (h * k, w * k);
    let mut out = vec![0.0; b * ho * wo * c];
    let xd = x.data();
    for s in 0..b {
        for y in 0..ho {
            for xx in 0..wo {
                let src = ((s * h + y / k) * w + xx / k) * c;
                let dst = ((s * ho + y) * wo + xx) * c;
                out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
            }
        }
    }
    Ok(conv::shaped_like_input(x, b, ho, wo, c, out))
}

fn upsample_backward(x: &Tensor, k: usize, gout: &Tensor) -> Result<Tensor> {
    let (b, h, w, c) = batch_dims(x, "upsample")?;
    let (ho, wo) = (h * k, w * k);
    if gout.len() != b * ho * wo * c {
        return Err(Error::ShapeMismatch("upsample backward: gradient size".into()));
    }
    let mut dx = Tensor::zeros_like(x);
    let d = dx.data_mut();
    let g = gout.data();
    for s in 0..b {
        for y in 0..ho {
            for xx in 0..wo {
                let dst = ((s * h + y / k) * w + xx / k) * c;
                let src = ((s * ho + y) * wo + xx) * c;
                for ch in 0..c {
                    d[dst + ch] += g[src + ch];
                }
            }
        }
    }
    Ok(dx)
}

fn check_same(gout: &Tensor, x: &Tensor, what: &str) -> Result<()> {
    if gout.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what} backward: gradient {:?} for input {:?}",
            gout.shape(),
            x.shape()
        )));
    }
    Ok(())
}

impl Layer {
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
        let (y, aux) = match self {
            Layer::Conv2d(c) => (c.forward(x)?, Aux::None),
            Layer::Depthwise(d) => (d.forward(x)?, Aux::None),
            Layer::BatchNorm(bn) => {
                let (y, cache) = bn.forward(x, mode)?;
                (y, Aux::Bn(cache))
            }
            Layer::InstanceNorm(eps) => {
                let (y, inv) = instance_norm_forward(x, *eps)?;
                (y.clone(), Aux::Inst(y, inv))
            }
            Layer::MaxPool(p) => {
                let (y, arg) = p.forward(x)?;
                (y, Aux::Pool(arg))
            }
            Layer::Relu => (x.relu(), Aux::None),
            Layer::LeakyRelu(a) => {
                let a = *a;
                (x.map(|v| if v > 0.0 { v } else { a * v }), Aux::None)
            }
            Layer::Tanh => {
                let y = x.tanh();
                (y.clone(), Aux::Output(y))
            }
            Layer::Sigmoid => {
                let y = x.sigmoid();
                (y.clone(), Aux::Output(y))
            }
            Layer::Upsample(k) => (upsample(x, *k)?, Aux::None),
            Layer::Linear(l) => (l.forward(x)?, Aux::None),
            Layer::Flatten => {
                let b = x.shape()[0];
                let n = x.len() / b;
                (x.clone().reshape(&[b, n])?, Aux::None)
            }
            Layer::Reshape([h, w, c]) => {
                let b = x.shape()[0];
                (x.clone().reshape(&[b, *h, *w, *c])?, Aux::None)
            }
            Layer::Residual(body) => {
                let trace = body.forward(x, mode)?;
                let y = x.add(&trace.output)?;
                if y.shape() != x.shape() {
                    return Err(Error::ShapeMismatch("residual body changes shape".into()));
                }
                (y, Aux::Residual(Box::new(trace)))
            }
        };
        Ok((y, Cache { input: x.clone(), aux }))
    }

    /// Returns `(grad_input, grads)` with grads in [`Layer::params`] order.
    pub fn backward(&self, cache: &Cache, gout: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        let x = &cache.input;
        match (self, &cache.aux) {
            (Layer::Conv2d(c), _) => c.backward(x, gout, need_dx),
            (Layer::Depthwise(d), _) => d.backward(x, gout, need_dx),
            (Layer::BatchNorm(bn), Aux::Bn(bc)) => {
                let (dx, g) = bn.backward(bc, gout)?;
                Ok((Some(dx), g))
            }
            (Layer::InstanceNorm(_), Aux::Inst(y, inv)) => Ok((Some(instance_norm_backward(y, inv, gout)?), vec![])),
            (Layer::MaxPool(p), Aux::Pool(arg)) => Ok((Some(p.backward(x, arg, gout)?), vec![])),
            (Layer::Relu, _) => {
                check_same(gout, x, "relu")?;
                let d = x.data().iter().zip(gout.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
                Ok((Some(Tensor::from_vec(x.shape(), d)?), vec![]))
            }
            (Layer::LeakyRelu(a), _) => {
                check_same(gout, x, "leaky relu")?;
                let d = x.data().iter().zip(gout.data()).map(|(&v, &g)| if v > 0.0 { g } else { a * g }).collect();
                Ok((Some(Tensor::from_vec(x.shape(), d)?), vec![]))
            }
            (Layer::Tanh, Aux::Output(y)) => {
                check_same(gout, x, "tanh")?;
                let d = y.data().iter().zip(gout.data()).map(|(&t, &g)| g * (1.0 - t * t)).collect();
                Ok((Some(Tensor::from_vec(x.shape(), d)?), vec![]))
            }
            (Layer::Sigmoid, Aux::Output(y)) => {
                check_same(gout, x, "sigmoid")?;
                let d = y.data().iter().zip(gout.data()).map(|(&s, &g)| g * s * (1.0 - s)).collect();
                Ok((Some(Tensor::from_vec(x.shape(), d)?), vec![]))
            }
            (Layer::Upsample(k), _) => Ok((Some(upsample_backward(x, *k, gout)?), vec![])),
            (Layer::Linear(l), _) => l.backward(x, gout, need_dx),
            (Layer::Flatten, _) | (Layer::Reshape(_), _) => {
                if gout.len() != x.len() {
                    return Err(Error::ShapeMismatch("reshape backward: gradient size".into()));
                }
                Ok((Some(gout.clone().reshape(x.shape())?), vec![]))
            }
            (Layer::Residual(body), Aux::Residual(trace)) => {
                check_same(gout, x, "residual")?;
                let (dbody, grads) = body.backward(trace, gout, true)?;
                let dx = gout.add(&dbody.expect("requested"))?;
                Ok((Some(dx), grads))
            }
            _ => Err(Error::ShapeMismatch(format!("cache does not belong to {}", self.describe()))),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&c.kernel, &c.bias],
            Layer::Depthwise(d) => vec![&d.kernel, &d.bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::Residual(s) => s.params(),
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.kernel, &mut c.bias],
            Layer::Depthwise(d) => vec![&mut d.kernel, &mut d.bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Residual(s) => s.params_mut(),
            _ => vec![],
        }
    }

    /// Non-trainable state that still belongs in a checkpoint.
    pub fn buffers(&self) -> Vec<&Tensor> {
        match self {
            Layer::BatchNorm(bn) => vec![&bn.running_mean, &bn.running_var],
            Layer::Residual(s) => s.buffers(),
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::BatchNorm(bn) => vec![&mut bn.running_mean, &mut bn.running_var],
            Layer::Residual(s) => s.buffers_mut(),
            _ => vec![],
        }
    }

    fn commit(&mut self, cache: &Cache) {
        match (self, &cache.aux) {
            (Layer::BatchNorm(bn), Aux::Bn(c)) => bn.commit(c),
            (Layer::Residual(s), Aux::Residual(t)) => s.commit(t),
            _ => {}
        }
    }

    /// Per-sample output shape (no batch axis).
    pub fn output_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match *shape {
                [h, w, c] => Ok((h, w, c)),
                _ => Err(Error::ShapeMismatch(format!("{what} expects [H,W,C], got {shape:?}"))),
            }
        };
        match self {
            Layer::Conv2d(cv) => {
                let (h, w, c) = spatial("conv")?;
                let (_, _, m, n) = cv.dims();
                if c != m {
                    return Err(Error::ShapeMismatch(format!("conv expects depth {m}, got {c}")));
                }
                let (ho, wo) = cv.output_hw(h, w)?;
                Ok(vec![ho, wo, n])
            }
            Layer::Depthwise(d) => {
                let (h, w, c) = spatial("depthwise")?;
                let (_, _, m) = d.dims();
                if c != m {
                    return Err(Error::ShapeMismatch(format!("depthwise expects depth {m}, got {c}")));
                }
                let (ho, wo) = d.output_hw(h, w)?;
                Ok(vec![ho, wo, c])
            }
            Layer::BatchNorm(bn) => {
                if shape.last() != Some(&bn.channels()) {
                    return Err(Error::ShapeMismatch(format!(
                        "batchnorm over {} channels got {shape:?}",
                        bn.channels()
                    )));
                }
                Ok(shape.to_vec())
            }
            Layer::MaxPool(p) => {
                let (h, w, c) = spatial("maxpool")?;
                let (ho, wo) = p.output_hw(h, w)?;
                Ok(vec![ho, wo, c])
            }
            Layer::InstanceNorm(_) => {
                spatial("instance norm")?;
                Ok(shape.to_vec())
            }
            Layer::Relu | Layer::LeakyRelu(_) | Layer::Tanh | Layer::Sigmoid => Ok(shape.to_vec()),
            Layer::Upsample(k) => {
                let (h, w, c) = spatial("upsample")?;
                Ok(vec![h * k, w * k, c])
            }
            Layer::Linear(l) => {
                if shape != [l.input_dim()] {
                    return Err(Error::ShapeMismatch(format!(
                        "linear expects [{}], got {shape:?}",
                        l.input_dim()
                    )));
                }
                Ok(vec![l.output_dim()])
            }
            Layer::Flatten => Ok(vec![shape.iter().product()]),
            Layer::Reshape(t) => {
                if shape.iter().product::<usize>() != t.iter().product::<usize>() {
                    return Err(Error::ShapeMismatch(format!("cannot reshape {shape:?} to {t:?}")));
                }
                Ok(t.to_vec())
            }
            Layer::Residual(s) => {
                let out = s.output_shape(shape)?;
                if out != shape {
                    return Err(Error::ShapeMismatch(format!("residual body maps {shape:?} to {out:?}")));
                }
                Ok(out)
            }
        }
    }

    /// Multiply-accumulates for one sample of the given input shape; bias,
    /// pooling, activations and normalization count as zero.
    pub fn macs(&self, shape: &[usize]) -> Result<u64> {
        match self {
            Layer::Conv2d(c) => c.macs(shape[0], shape[1]),
            Layer::Depthwise(d) => d.macs(shape[0], shape[1]),
            Layer::Linear(l) => Ok((l.input_dim() * l.output_dim()) as u64),
            Layer::Residual(s) => s.macs(shape),
            _ => Ok(0),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Layer::Conv2d(c) => {
                let (kh, kw, m, n) = c.dims();
                format!(
                    "conv {kh}x{kw} {m}->{n} s{}x{} p{}x{}",
                    c.stride.0, c.stride.1, c.pad.0, c.pad.1
                )
            }
            Layer::Depthwise(d) => {
                let (kh, kw, m) = d.dims();
                format!("depthwise {kh}x{kw} {m} s{}x{} p{}x{}", d.stride.0, d.stride.1, d.pad.0, d.pad.1)
            }
            Layer::BatchNorm(bn) => format!("batchnorm {}", bn.channels()),
            Layer::MaxPool(p) => format!(
                "maxpool {}x{} s{}x{} p{}x{}",
                p.window.0, p.window.1, p.stride.0, p.stride.1, p.pad.0, p.pad.1
            ),
            Layer::InstanceNorm(eps) => format!("instancenorm {eps}"),
            Layer::Relu => "relu".into(),
            Layer::LeakyRelu(a) => format!("leakyrelu {a}"),
            Layer::Tanh => "tanh".into(),
            Layer::Sigmoid => "sigmoid".into(),
            Layer::Upsample(k) => format!("upsample {k}"),
            Layer::Linear(l) => format!("linear {}->{}", l.input_dim(), l.output_dim()),
            Layer::Flatten => "flatten".into(),
            Layer::Reshape([h, w, c]) => format!("reshape {h}x{w}x{c}"),
            Layer::Residual(s) => format!("residual[{}]", s.layers.len()),
        }
    }
}

/// A feed-forward chain of layers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Trace> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&cur, mode)?;
            caches.push(cache);
            cur = y;
        }
        Ok(Trace { caches, output: cur })
    }

    /// Inference-mode output without keeping caches.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, Mode::Infer)?.0;
        }
        Ok(cur)
    }

    /// Gradients are returned in [`Sequential::params`] order.
    pub fn backward(&self, trace: &Trace, gout: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("trace does not match network depth".into()));
        }
        if gout.shape() != trace.output.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {:?} for output {:?}",
                gout.shape(),
                trace.output.shape()
            )));
        }
        let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut g = gout.clone();
        for i in (0..self.layers.len()).rev() {
            let want = i > 0 || need_dx;
            let (dx, grads) = self.layers[i].backward(&trace.caches[i], &g, want)?;
            per_layer[i] = grads;
            match dx {
                Some(d) => g = d,
                None => {
                    debug_assert!(!want);
                }
            }
        }
        let dx = if need_dx { Some(g) } else { None };
        Ok((dx, per_layer.into_iter().flatten().collect()))
    }

    /// Folds batch statistics recorded in a train-mode trace into every
    /// batch-norm layer.
    pub fn commit(&mut self, trace: &Trace) {
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            layer.commit(cache);
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn buffers(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn output_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        self.layer_shapes(shape).map(|v| v.last().cloned().unwrap_or_else(|| shape.to_vec()))
    }

    /// Output shape after every layer; errors name the first layer that
    /// does not compose.
    pub fn layer_shapes(&self, shape: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut cur = shape.to_vec();
        for (index, layer) in self.layers.iter().enumerate() {
            cur = layer.output_shape(&cur).map_err(|e| Error::Build {
                index,
                reason: format!("{}: {e}", layer.describe()),
            })?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Per-layer MACs for one sample.
    pub fn layer_macs(&self, shape: &[usize]) -> Result<Vec<u64>> {
        let mut cur = shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            out.push(layer.macs(&cur)?);
            cur = layer.output_shape(&cur)?;
        }
        Ok(out)
    }

    pub fn macs(&self, shape: &[usize]) -> Result<u64> {
        Ok(self.layer_macs(shape)?.iter().sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, Dist, Rng};

    fn rand(shape: &[usize], rng: &mut Rng) -> Tensor {
        Tensor::random(shape, Dist::Gaussian { mean: 0.0, std: 1.0 }, rng).unwrap()
    }

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::from_vec(&[1, 1, 2, 1], vec![1.0, 2.0]).unwrap();
        let (y, _) = Layer::Upsample(2).forward(&x, Mode::Infer).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 1]);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn sequential_gradients_pass_finite_differences() {
        let mut rng = Rng::new(12);
        let body = Sequential::new(vec![
            Layer::Conv2d(Conv2d::new((3, 3), 4, 4, (1, 1), (1, 1), &mut rng)),
            Layer::Tanh,
        ]);
        let net = Sequential::new(vec![
            Layer::Conv2d(Conv2d::new((3, 3), 2, 4, (2, 2), (1, 1), &mut rng)),
            Layer::BatchNorm(BatchNorm::new(4)),
            Layer::LeakyRelu(0.2),
            Layer::InstanceNorm(1e-5),
            Layer::Residual(body),
            Layer::Upsample(2),
            Layer::MaxPool(MaxPool::new((2, 2), (2, 2), (0, 0)).unwrap()),
            Layer::Sigmoid,
            Layer::Flatten,
            Layer::Linear(Linear::new(36, 3, &mut rng)),
        ]);
        let x = rand(&[3, 6, 6, 2], &mut rng);
        let w = rand(&[3, 3], &mut rng);
        let trace = net.forward(&x, Mode::Train).unwrap();
        let (dx, grads) = net.backward(&trace, &w, true).unwrap();
        let loss = |n: &Sequential, x: &Tensor| n.forward(x, Mode::Train).unwrap().output.mul(&w).unwrap().sum();
        let err = finite_diff_check(|v| loss(&net, v), &x, dx.as_ref().unwrap(), 1e-6).unwrap();
        assert!(err < 1e-4, "{err}");
        let params: Vec<Tensor> = net.params().into_iter().cloned().collect();
        for (k, p) in params.iter().enumerate() {
            let err = finite_diff_check(
                |v| {
                    let mut n = net.clone();
                    *n.params_mut()[k] = v.clone();
                    loss(&n, &x)
                },
                p,
                &grads[k],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "param {k}: {err}");
        }
    }

    #[test]
    fn layer_shapes_report_the_failing_index() {
        let mut rng = Rng::new(1);
        let net = Sequential::new(vec![
            Layer::Conv2d(Conv2d::new((3, 3), 3, 8, (1, 1), (1, 1), &mut rng)),
            Layer::Relu,
            Layer::Conv2d(Conv2d::new((3, 3), 4, 8, (1, 1), (1, 1), &mut rng)),
        ]);
        match net.layer_shapes(&[8, 8, 3]) {
            Err(Error::Build { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn commit_updates_running_stats_only_on_request() {
        let mut rng = Rng::new(5);
        let mut net = Sequential::new(vec![Layer::BatchNorm(BatchNorm::new(2))]);
        let x = rand(&[4, 2, 2, 2], &mut rng).map(|v| v + 3.0);
        let trace = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(net.buffers()[0].data(), &[0.0, 0.0]);
        net.commit(&trace);
        assert!(net.buffers()[0].data().iter().all(|&m| m > 0.1));
    }
}
