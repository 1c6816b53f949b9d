//! Four-gate LSTM (input, forget, output, input-modulation) and the
//! bidirectional wrapper used on top of the convolutional features.
//!
//! All step tensors are batched rows: `x_t` is `[B, in]`, states are `[B, H]`.
//! Gate pre-activations are packed as `[i | f | o | g]` along the last axis.

use crate::error::{Error, Result};
use crate::layers::conv::fan_in_uniform;
use crate::tensor::{gemm, sigmoid, Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    /// `[in, 4H]`
    pub w_x: Tensor,
    /// `[H, 4H]`
    pub w_h: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct StepCache {
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    /// Activated gates `[B, 4H]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        LstmCell {
            w_x: fan_in_uniform(&[input, 4 * hidden], input, rng),
            w_h: fan_in_uniform(&[hidden, 4 * hidden], hidden, rng),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn from_parts(w_x: Tensor, w_h: Tensor, bias: Tensor) -> Result<Self> {
        let ok = w_x.rank() == 2
            && w_h.rank() == 2
            && w_h.shape()[1] == 4 * w_h.shape()[0]
            && w_x.shape()[1] == w_h.shape()[1]
            && bias.shape() == [w_h.shape()[1]];
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "lstm parts w_x {:?}, w_h {:?}, bias {:?}",
                w_x.shape(),
                w_h.shape(),
                bias.shape()
            )));
        }
        Ok(LstmCell { w_x, w_h, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.w_x, &self.w_h, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.bias]
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros_like(p)).collect()
    }
}

/// One recurrence step: `c_t = f⊙c_prev + i⊙g`, `h_t = o⊙tanh(c_t)`.
pub fn lstm_cell_step(x: &Tensor, h_prev: &Tensor, c_prev: &Tensor, p: &LstmCell) -> Result<(Tensor, Tensor, StepCache)> {
    let hd = p.hidden();
    if x.rank() != 2 || x.shape()[1] != p.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "lstm input {:?}, expected [B, {}]",
            x.shape(),
            p.input_dim()
        )));
    }
    let b = x.shape()[0];
    if h_prev.shape() != [b, hd] || c_prev.shape() != [b, hd] {
        return Err(Error::ShapeMismatch(format!(
            "lstm state {:?}/{:?}, expected [{b}, {hd}]",
            h_prev.shape(),
            c_prev.shape()
        )));
    }
    let g4 = 4 * hd;
    let mut z = Vec::with_capacity(b * g4);
    for _ in 0..b {
        z.extend_from_slice(p.bias.data());
    }
    gemm::nn(b, p.input_dim(), g4, x.data(), p.w_x.data(), &mut z);
    gemm::nn(b, hd, g4, h_prev.data(), p.w_h.data(), &mut z);
    let mut c = vec![0.0; b * hd];
    let mut h = vec![0.0; b * hd];
    let mut tanh_c = vec![0.0; b * hd];
    for r in 0..b {
        let zr = &mut z[r * g4..(r + 1) * g4];
        for j in 0..3 * hd {
            zr[j] = sigmoid(zr[j]);
        }
        for j in 3 * hd..g4 {
            zr[j] = zr[j].tanh();
        }
        for j in 0..hd {
            let (i, f, o, g) = (zr[j], zr[hd + j], zr[2 * hd + j], zr[3 * hd + j]);
            let ct = f * c_prev.data()[r * hd + j] + i * g;
            let tc = ct.tanh();
            c[r * hd + j] = ct;
            tanh_c[r * hd + j] = tc;
            h[r * hd + j] = o * tc;
        }
    }
    let cache = StepCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gates: z,
        tanh_c,
    };
    Ok((Tensor::from_vec(&[b, hd], h)?, Tensor::from_vec(&[b, hd], c)?, cache))
}

/// Backward through one step. `dh` and `dc` are the total gradients arriving
/// at `h_t` and `c_t`; parameter gradients accumulate into `grads`
/// (`[w_x, w_h, bias]`). Returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_cell_backward(
    p: &LstmCell,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut [Tensor],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let hd = p.hidden();
    let g4 = 4 * hd;
    let b = cache.x.shape()[0];
    let mut dz = vec![0.0; b * g4];
    let mut dc_prev = vec![0.0; b * hd];
    for r in 0..b {
        let zr = &cache.gates[r * g4..(r + 1) * g4];
        let dzr = &mut dz[r * g4..(r + 1) * g4];
        for j in 0..hd {
            let k = r * hd + j;
            let (i, f, o, g) = (zr[j], zr[hd + j], zr[2 * hd + j], zr[3 * hd + j]);
            let tc = cache.tanh_c[k];
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dzr[j] = dct * g * i * (1.0 - i);
            dzr[hd + j] = dct * cache.c_prev.data()[k] * f * (1.0 - f);
            dzr[2 * hd + j] = d_o * o * (1.0 - o);
            dzr[3 * hd + j] = dct * i * (1.0 - g * g);
            dc_prev[k] = dct * f;
        }
    }
    gemm::tn(p.input_dim(), b, g4, cache.x.data(), &dz, grads[0].data_mut());
    gemm::tn(hd, b, g4, cache.h_prev.data(), &dz, grads[1].data_mut());
    let db = grads[2].data_mut();
    for row in dz.chunks(g4) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; b * p.input_dim()];
        gemm::nt(b, g4, p.input_dim(), &dz, p.w_x.data(), &mut dx);
        dx
    });
    let mut dh_prev = vec![0.0; b * hd];
    gemm::nt(b, g4, hd, &dz, p.w_h.data(), &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

/// Runs one direction over `seq` from zero state. Outputs are indexed by the
/// original time position regardless of direction.
fn run_direction(seq: &[Tensor], p: &LstmCell, reverse: bool) -> Result<(Vec<Tensor>, Vec<StepCache>)> {
    let b = seq[0].shape().first().copied().unwrap_or(1);
    let hd = p.hidden();
    let mut h = Tensor::zeros(&[b, hd]);
    let mut c = Tensor::zeros(&[b, hd]);
    let t_len = seq.len();
    let mut outs: Vec<Option<Tensor>> = vec![None; t_len];
    let mut caches = Vec::with_capacity(t_len);
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        let (h2, c2, cache) = lstm_cell_step(&seq[t], &h, &c, p)?;
        outs[t] = Some(h2.clone());
        caches.push(cache);
        h = h2;
        c = c2;
    }
    Ok((outs.into_iter().map(|o| o.expect("every step visited")).collect(), caches))
}

fn backward_direction(
    p: &LstmCell,
    caches: &[StepCache],
    dhs: &[Vec<f64>],
    reverse: bool,
    need_dx: bool,
) -> (Vec<Option<Vec<f64>>>, Vec<Tensor>) {
    let t_len = caches.len();
    let mut grads = p.zero_grads();
    let n = dhs[0].len();
    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    let mut dxs: Vec<Option<Vec<f64>>> = vec![None; t_len];
    for step in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - step } else { step };
        let dh: Vec<f64> = dhs[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let (dx, dh_prev, dc_prev) = lstm_cell_backward(p, &caches[step], &dh, &dc_next, &mut grads, need_dx);
        dxs[t] = dx;
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    (dxs, grads)
}

/// Forward and backward LSTMs over the same sequence; output at `t` is
/// `[h_fwd(t) | h_bwd(t)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

#[derive(Clone, Debug)]
pub struct BiLstmCache {
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
}

impl BiLstm {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiLstm {
            fwd: LstmCell::new(input, hidden, rng),
            bwd: LstmCell::new(input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden() + self.bwd.hidden()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.fwd.params();
        p.extend(self.bwd.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.fwd.params_mut();
        p.extend(self.bwd.params_mut());
        p
    }

    pub fn forward(&self, seq: &[Tensor]) -> Result<(Vec<Tensor>, BiLstmCache)> {
        bilstm_forward(seq, &self.fwd, &self.bwd)
    }

    /// `grads_out[t]` is `[B, 2H]`. Returns per-step input gradients (when
    /// requested) and parameter gradients in [`BiLstm::params`] order.
    pub fn backward(&self, cache: &BiLstmCache, grads_out: &[Tensor], need_dx: bool) -> Result<(Option<Vec<Tensor>>, Vec<Tensor>)> {
        if grads_out.len() != cache.fwd.len() {
            return Err(Error::ShapeMismatch(format!(
                "bilstm backward: {} gradients for {} steps",
                grads_out.len(),
                cache.fwd.len()
            )));
        }
        let (hf, hb) = (self.fwd.hidden(), self.bwd.hidden());
        let mut dfs = Vec::with_capacity(grads_out.len());
        let mut dbs = Vec::with_capacity(grads_out.len());
        for g in grads_out {
            let b = g.shape()[0];
            if g.shape() != [b, hf + hb] {
                return Err(Error::ShapeMismatch(format!("bilstm backward gradient {:?}", g.shape())));
            }
            let mut df = Vec::with_capacity(b * hf);
            let mut db = Vec::with_capacity(b * hb);
            for row in g.data().chunks(hf + hb) {
                df.extend_from_slice(&row[..hf]);
                db.extend_from_slice(&row[hf..]);
            }
            dfs.push(df);
            dbs.push(db);
        }
        let (dx_f, mut grads) = backward_direction(&self.fwd, &cache.fwd, &dfs, false, need_dx);
        let (dx_b, grads_b) = backward_direction(&self.bwd, &cache.bwd, &dbs, true, need_dx);
        grads.extend(grads_b);
        let dx = if need_dx {
            let mut out = Vec::with_capacity(dx_f.len());
            for (t, (a, b)) in dx_f.into_iter().zip(dx_b).enumerate() {
                let a = a.expect("dx requested");
                let b = b.expect("dx requested");
                let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                let rows = cache.fwd[0].x.shape()[0];
                let _ = t;
                out.push(Tensor::from_vec(&[rows, self.fwd.input_dim()], sum)?);
            }
            Some(out)
        } else {
            None
        };
        Ok((dx, grads))
    }
}

/// Bidirectional pass; output length always equals input length.
pub fn bilstm_forward(seq: &[Tensor], fwd: &LstmCell, bwd: &LstmCell) -> Result<(Vec<Tensor>, BiLstmCache)> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("bilstm over an empty sequence".into()));
    }
    let (hf, cf) = run_direction(seq, fwd, false)?;
    let (hb, cb) = run_direction(seq, bwd, true)?;
    let (nf, nb) = (fwd.hidden(), bwd.hidden());
    let mut out = Vec::with_capacity(seq.len());
    for (a, b) in hf.iter().zip(&hb) {
        let rows = a.shape()[0];
        let mut data = Vec::with_capacity(rows * (nf + nb));
        for r in 0..rows {
            data.extend_from_slice(&a.data()[r * nf..(r + 1) * nf]);
            data.extend_from_slice(&b.data()[r * nb..(r + 1) * nb]);
        }
        out.push(Tensor::from_vec(&[rows, nf + nb], data)?);
    }
    Ok((out, BiLstmCache { fwd: cf, bwd: cb }))
}
