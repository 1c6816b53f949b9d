use crate::error::{Error, Result};
use crate::layers::conv::{batch_dims, shaped_like_input, window_out};
use crate::tensor::Tensor;

/// Max pooling with separate height/width window, stride and padding.
/// Padded cells never win a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl MaxPool {
    pub fn new(window: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Result<Self> {
        if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument("pool window and stride must be at least 1".into()));
        }
        if pad.0 >= window.0 || pad.1 >= window.1 {
            return Err(Error::InvalidArgument(format!(
                "pool padding {pad:?} must be smaller than the window {window:?}"
            )));
        }
        Ok(MaxPool { window, stride, pad })
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            window_out(h, self.window.0, self.stride.0, self.pad.0),
            window_out(w, self.window.1, self.stride.1, self.pad.1),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::ShapeMismatch(format!(
                "pool window {:?} larger than padded {h}x{w} input",
                self.window
            ))),
        }
    }

    /// Output plus, for every output element, the flat input index of its maximum.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (b, h, w, c) = batch_dims(x, "maxpool")?;
        let (ho, wo) = self.output_hw(h, w)?;
        let mut out = vec![f64::NEG_INFINITY; b * ho * wo * c];
        let mut arg = vec![usize::MAX; out.len()];
        let xd = x.data();
        for s in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    let obase = ((s * ho + oy) * wo + ox) * c;
                    for ky in 0..self.window.0 {
                        let iy = (oy * self.stride.0 + ky) as isize - self.pad.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.window.1 {
                            let ix = (ox * self.stride.1 + kx) as isize - self.pad.1 as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let ibase = ((s * h + iy as usize) * w + ix as usize) * c;
                            for ch in 0..c {
                                let v = xd[ibase + ch];
                                if v > out[obase + ch] || arg[obase + ch] == usize::MAX {
                                    out[obase + ch] = v;
                                    arg[obase + ch] = ibase + ch;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((shaped_like_input(x, b, ho, wo, c, out), arg))
    }

    /// Routes each output gradient to its argmax position; every other input
    /// position receives exactly zero.
    pub fn backward(&self, x: &Tensor, argmax: &[usize], gout: &Tensor) -> Result<Tensor> {
        if gout.len() != argmax.len() {
            return Err(Error::ShapeMismatch(format!(
                "maxpool backward: {} gradients for {} outputs",
                gout.len(),
                argmax.len()
            )));
        }
        let mut dx = Tensor::zeros_like(x);
        let d = dx.data_mut();
        for (&i, &g) in argmax.iter().zip(gout.data()) {
            d[i] += g;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Dist, Rng};

    #[test]
    fn two_by_two() {
        let x = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pool = MaxPool::new((2, 2), (2, 2), (0, 0)).unwrap();
        let (y, _) = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn asymmetric_width_halving() {
        let x = Tensor::zeros(&[6, 10, 2]);
        let pool = MaxPool::new((1, 2), (1, 2), (0, 0)).unwrap();
        assert_eq!(pool.forward(&x).unwrap().0.shape(), &[6, 5, 2]);
        // The height-halving reading used by the recognizer stack.
        let pool = MaxPool::new((2, 2), (2, 1), (0, 1)).unwrap();
        assert_eq!(pool.forward(&x).unwrap().0.shape(), &[3, 11, 2]);
    }

    #[test]
    fn matches_window_scan() {
        let mut rng = Rng::new(3);
        let x = Tensor::random(&[2, 7, 9, 3], Dist::Uniform { low: -1.0, high: 1.0 }, &mut rng).unwrap();
        let pool = MaxPool::new((3, 2), (2, 2), (1, 1)).unwrap();
        let (y, _) = pool.forward(&x).unwrap();
        let (ho, wo) = pool.output_hw(7, 9).unwrap();
        for s in 0..2 {
            for oy in 0..ho {
                for ox in 0..wo {
                    for c in 0..3 {
                        let mut best = f64::NEG_INFINITY;
                        for ky in 0..3 {
                            for kx in 0..2 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..7).contains(&iy) && (0..9).contains(&ix) {
                                    best = best.max(x.data()[((s * 7 + iy as usize) * 9 + ix as usize) * 3 + c]);
                                }
                            }
                        }
                        assert_eq!(y.data()[((s * ho + oy) * wo + ox) * 3 + c], best);
                    }
                }
            }
        }
    }

    #[test]
    fn backward_routes_to_argmax_only() {
        let mut rng = Rng::new(4);
        let x = Tensor::random(&[4, 4, 2], Dist::Uniform { low: -1.0, high: 1.0 }, &mut rng).unwrap();
        let pool = MaxPool::new((2, 2), (2, 2), (0, 0)).unwrap();
        let (y, arg) = pool.forward(&x).unwrap();
        let dx = pool.backward(&x, &arg, &Tensor::fill(y.shape(), 1.0).unwrap()).unwrap();
        let nonzero = dx.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, y.len());
        for (i, &v) in dx.data().iter().enumerate() {
            assert_eq!(v != 0.0, arg.contains(&i));
        }
    }

    #[test]
    fn rejects_oversized_window() {
        let pool = MaxPool::new((5, 5), (1, 1), (0, 0)).unwrap();
        assert!(matches!(pool.forward(&Tensor::zeros(&[3, 3, 1])), Err(Error::ShapeMismatch(_))));
        assert!(MaxPool::new((0, 2), (1, 1), (0, 0)).is_err());
    }
}
