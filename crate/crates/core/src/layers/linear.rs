use crate::error::{Error, Result};
use crate::layers::conv::fan_in_uniform;
use crate::tensor::{gemm, Rng, Tensor};

/// Fully-connected layer `y = x·W + b` on `[B, in]` rows; `W` is `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: fan_in_uniform(&[input, output], input, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::ShapeMismatch(format!(
                "linear weight {:?} / bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Linear { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn rows(&self, x: &Tensor) -> Result<usize> {
        if x.rank() != 2 || x.shape()[1] != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "linear expects [B, {}], got {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        Ok(x.shape()[0])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.rows(x)?;
        let (k, n) = (self.input_dim(), self.output_dim());
        let mut out = Vec::with_capacity(b * n);
        for _ in 0..b {
            out.extend_from_slice(self.bias.data());
        }
        gemm::nn(b, k, n, x.data(), self.weight.data(), &mut out);
        Tensor::from_vec(&[b, n], out)
    }

    /// Returns `(grad_input, [grad_weight, grad_bias])`.
    pub fn backward(&self, x: &Tensor, gout: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        let b = self.rows(x)?;
        let (k, n) = (self.input_dim(), self.output_dim());
        if gout.shape() != [b, n] {
            return Err(Error::ShapeMismatch(format!(
                "linear backward: gradient {:?}, expected [{b}, {n}]",
                gout.shape()
            )));
        }
        let mut dw = vec![0.0; k * n];
        gemm::tn(k, b, n, x.data(), gout.data(), &mut dw);
        let mut db = vec![0.0; n];
        for row in gout.data().chunks(n) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        let dx = if need_dx {
            let mut dx = vec![0.0; b * k];
            gemm::nt(b, n, k, gout.data(), self.weight.data(), &mut dx);
            Some(Tensor::from_vec(&[b, k], dx)?)
        } else {
            None
        };
        Ok((dx, vec![Tensor::from_vec(&[k, n], dw)?, Tensor::from_vec(&[n], db)?]))
    }
}
