//! Standard and depthwise 2-D convolutions over `[B, H, W, C]` feature maps.
//!
//! Rank-3 inputs `[H, W, C]` are accepted everywhere and treated as a batch of
//! one; the output keeps the rank of the input.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Dist, Rng, Tensor};

pub(crate) fn batch_dims(x: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [h, w, c] => Ok((1, h, w, c)),
        [b, h, w, c] => Ok((b, h, w, c)),
        _ => Err(Error::ShapeMismatch(format!(
            "{what} expects [B,H,W,C] or [H,W,C], got {:?}",
            x.shape()
        ))),
    }
}

pub(crate) fn shaped_like_input(x: &Tensor, b: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Tensor {
    let shape: Vec<usize> = if x.rank() == 3 {
        vec![h, w, c]
    } else {
        vec![b, h, w, c]
    };
    Tensor::from_vec(&shape, data).expect("conv output shape")
}

/// Output extent of a sliding window, or `None` if the window does not fit.
pub(crate) fn window_out(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

pub(crate) fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let s = 1.0 / (fan_in as f64).sqrt();
    Tensor::random(shape, Dist::Uniform { low: -s, high: s }, rng).expect("init shape")
}

/// Standard convolution; kernel is `[kh, kw, M, N]`, bias is `[N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2d {
    /// Kernel drawn from uniform(-s, s), s = 1/sqrt(kh·kw·M); bias zero.
    pub fn new(
        kernel: (usize, usize),
        in_depth: usize,
        out_depth: usize,
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut Rng,
    ) -> Self {
        let (kh, kw) = kernel;
        Conv2d {
            kernel: fan_in_uniform(&[kh, kw, in_depth, out_depth], kh * kw * in_depth, rng),
            bias: Tensor::zeros(&[out_depth]),
            stride,
            pad,
        }
    }

    pub fn from_parts(kernel: Tensor, bias: Tensor, stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        if kernel.rank() != 4 || bias.shape() != [kernel.shape()[3]] {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel {:?} / bias {:?}",
                kernel.shape(),
                bias.shape()
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument("conv stride must be positive".into()));
        }
        Ok(Conv2d {
            kernel,
            bias,
            stride,
            pad,
        })
    }

    /// `(kh, kw, M, N)`
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.kernel.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw, _, _) = self.dims();
        match (
            window_out(h, kh, self.stride.0, self.pad.0),
            window_out(w, kw, self.stride.1, self.pad.1),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::ShapeMismatch(format!(
                "{kh}x{kw} kernel does not fit {h}x{w} input with padding {:?}",
                self.pad
            ))),
        }
    }

    fn is_pointwise(&self) -> bool {
        let (kh, kw, _, _) = self.dims();
        kh == 1 && kw == 1 && self.stride == (1, 1) && self.pad == (0, 0)
    }

    /// Patch matrix `[Ho·Wo, kh·kw·M]` for one sample.
    fn im2col(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize, col: &mut [f64]) {
        let (kh, kw, m, _) = self.dims();
        let row_len = kh * kw * m;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.pad;
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &mut col[(oy * wo + ox) * row_len..(oy * wo + ox + 1) * row_len];
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        let dst = &mut row[(ky * kw + kx) * m..(ky * kw + kx + 1) * m];
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            dst.fill(0.0);
                        } else {
                            let off = (iy as usize * w + ix as usize) * m;
                            dst.copy_from_slice(&x[off..off + m]);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f64]) {
        let (kh, kw, m, _) = self.dims();
        let row_len = kh * kw * m;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.pad;
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &col[(oy * wo + ox) * row_len..(oy * wo + ox + 1) * row_len];
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let off = (iy as usize * w + ix as usize) * m;
                        let src = &row[(ky * kw + kx) * m..(ky * kw + kx + 1) * m];
                        for (d, s) in dx[off..off + m].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = batch_dims(x, "conv2d")?;
        let (kh, kw, m, n) = self.dims();
        if c != m {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects input depth {m}, got {c}"
            )));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        let rows = ho * wo;
        let row_len = kh * kw * m;
        let mut out = vec![0.0; b * rows * n];
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0.0; rows * row_len] };
        for s in 0..b {
            let xs = &x.data()[s * h * w * c..(s + 1) * h * w * c];
            let os = &mut out[s * rows * n..(s + 1) * rows * n];
            for r in 0..rows {
                os[r * n..(r + 1) * n].copy_from_slice(self.bias.data());
            }
            if self.is_pointwise() {
                gemm::nn(rows, row_len, n, xs, self.kernel.data(), os);
            } else {
                self.im2col(xs, h, w, ho, wo, &mut col);
                gemm::nn(rows, row_len, n, &col, self.kernel.data(), os);
            }
        }
        Ok(shaped_like_input(x, b, ho, wo, n, out))
    }

    /// Returns `(grad_input, [grad_kernel, grad_bias])`; the input gradient
    /// is skipped when `need_dx` is false.
    pub fn backward(&self, x: &Tensor, gout: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        let (b, h, w, c) = batch_dims(x, "conv2d backward")?;
        let (kh, kw, m, n) = self.dims();
        let (ho, wo) = self.output_hw(h, w)?;
        let (gb, gh, gw, gc) = batch_dims(gout, "conv2d backward")?;
        if (gb, gh, gw, gc) != (b, ho, wo, n) || c != m {
            return Err(Error::ShapeMismatch(format!(
                "conv2d backward: gradient {:?} does not match output [{b},{ho},{wo},{n}]",
                gout.shape()
            )));
        }
        let rows = ho * wo;
        let row_len = kh * kw * m;
        let mut dk = vec![0.0; row_len * n];
        let mut db = vec![0.0; n];
        let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
        let pointwise = self.is_pointwise();
        let mut col = if pointwise { Vec::new() } else { vec![0.0; rows * row_len] };
        let mut dcol = vec![0.0; rows * row_len];
        for s in 0..b {
            let xs = &x.data()[s * h * w * c..(s + 1) * h * w * c];
            let gs = &gout.data()[s * rows * n..(s + 1) * rows * n];
            for r in 0..rows {
                for (d, g) in db.iter_mut().zip(&gs[r * n..(r + 1) * n]) {
                    *d += g;
                }
            }
            if pointwise {
                gemm::tn(row_len, rows, n, xs, gs, &mut dk);
            } else {
                self.im2col(xs, h, w, ho, wo, &mut col);
                gemm::tn(row_len, rows, n, &col, gs, &mut dk);
            }
            if need_dx {
                let dxs = &mut dx[s * h * w * c..(s + 1) * h * w * c];
                if pointwise {
                    gemm::nt(rows, n, row_len, gs, self.kernel.data(), dxs);
                } else {
                    dcol.fill(0.0);
                    gemm::nt(rows, n, row_len, gs, self.kernel.data(), &mut dcol);
                    self.col2im(&dcol, h, w, ho, wo, dxs);
                }
            }
        }
        let grads = vec![
            Tensor::from_vec(self.kernel.shape(), dk)?,
            Tensor::from_vec(&[n], db)?,
        ];
        let dx = need_dx.then(|| shaped_like_input(x, b, h, w, c, dx));
        Ok((dx, grads))
    }

    /// Multiply-accumulates for one sample: kh·kw·M·N·Ho·Wo.
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (kh, kw, m, n) = self.dims();
        let (ho, wo) = self.output_hw(h, w)?;
        Ok((kh * kw * m * n * ho * wo) as u64)
    }
}

/// Depthwise convolution: one `kh×kw` filter per input channel, kernel
/// `[kh, kw, M]`, bias `[M]`. Channels never mix.
#[derive(Clone, Debug, PartialEq)]
pub struct Depthwise {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Depthwise {
    pub fn new(kernel: (usize, usize), depth: usize, stride: (usize, usize), pad: (usize, usize), rng: &mut Rng) -> Self {
        let (kh, kw) = kernel;
        Depthwise {
            kernel: fan_in_uniform(&[kh, kw, depth], kh * kw, rng),
            bias: Tensor::zeros(&[depth]),
            stride,
            pad,
        }
    }

    pub fn from_parts(kernel: Tensor, bias: Tensor, stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        if kernel.rank() != 3 || bias.shape() != [kernel.shape()[2]] {
            return Err(Error::ShapeMismatch(format!(
                "depthwise kernel {:?} / bias {:?}",
                kernel.shape(),
                bias.shape()
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument("depthwise stride must be positive".into()));
        }
        Ok(Depthwise {
            kernel,
            bias,
            stride,
            pad,
        })
    }

    /// `(kh, kw, M)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.kernel.shape();
        (s[0], s[1], s[2])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw, _) = self.dims();
        match (
            window_out(h, kh, self.stride.0, self.pad.0),
            window_out(w, kw, self.stride.1, self.pad.1),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::ShapeMismatch(format!(
                "{kh}x{kw} depthwise kernel does not fit {h}x{w} input"
            ))),
        }
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let (b, h, w, c) = batch_dims(x, "depthwise")?;
        let (_, _, m) = self.dims();
        if c != m {
            return Err(Error::ShapeMismatch(format!(
                "depthwise kernel has {m} channels, input has {c}"
            )));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        Ok((b, h, w, c, ho, wo))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, w, c, ho, wo) = self.check(x)?;
        let (kh, kw, _) = self.dims();
        let k = self.kernel.data();
        let mut out = vec![0.0; b * ho * wo * c];
        for s in 0..b {
            let xs = &x.data()[s * h * w * c..(s + 1) * h * w * c];
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = &mut out[((s * ho + oy) * wo + ox) * c..((s * ho + oy) * wo + ox + 1) * c];
                    o.copy_from_slice(self.bias.data());
                    for ky in 0..kh {
                        let iy = (oy * self.stride.0 + ky) as isize - self.pad.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * self.stride.1 + kx) as isize - self.pad.1 as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = &xs[(iy as usize * w + ix as usize) * c..][..c];
                            let ki = &k[(ky * kw + kx) * c..][..c];
                            for ((ov, xv), kv) in o.iter_mut().zip(xi).zip(ki) {
                                *ov += xv * kv;
                            }
                        }
                    }
                }
            }
        }
        Ok(shaped_like_input(x, b, ho, wo, c, out))
    }

    pub fn backward(&self, x: &Tensor, gout: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        let (b, h, w, c, ho, wo) = self.check(x)?;
        if batch_dims(gout, "depthwise backward")? != (b, ho, wo, c) {
            return Err(Error::ShapeMismatch(format!(
                "depthwise backward: gradient {:?} does not match output",
                gout.shape()
            )));
        }
        let (kh, kw, _) = self.dims();
        let k = self.kernel.data();
        let mut dk = vec![0.0; k.len()];
        let mut db = vec![0.0; c];
        let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
        for s in 0..b {
            let xs = &x.data()[s * h * w * c..(s + 1) * h * w * c];
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = &gout.data()[((s * ho + oy) * wo + ox) * c..][..c];
                    for (d, gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                    for ky in 0..kh {
                        let iy = (oy * self.stride.0 + ky) as isize - self.pad.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * self.stride.1 + kx) as isize - self.pad.1 as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xoff = (iy as usize * w + ix as usize) * c;
                            let koff = (ky * kw + kx) * c;
                            for ch in 0..c {
                                dk[koff + ch] += g[ch] * xs[xoff + ch];
                            }
                            if need_dx {
                                let base = s * h * w * c + xoff;
                                for ch in 0..c {
                                    dx[base + ch] += g[ch] * k[koff + ch];
                                }
                            }
                        }
                    }
                }
            }
        }
        let grads = vec![
            Tensor::from_vec(self.kernel.shape(), dk)?,
            Tensor::from_vec(&[c], db)?,
        ];
        let dx = need_dx.then(|| shaped_like_input(x, b, h, w, c, dx));
        Ok((dx, grads))
    }

    /// Multiply-accumulates for one sample: kh·kw·M·Ho·Wo.
    pub fn macs(&self, h: usize, w: usize) -> Result<u64> {
        let (kh, kw, m) = self.dims();
        let (ho, wo) = self.output_hw(h, w)?;
        Ok((kh * kw * m * ho * wo) as u64)
    }
}
