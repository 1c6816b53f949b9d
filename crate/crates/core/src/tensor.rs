//! Dense row-major `f64` tensors, the seeded random stream, and the
//! finite-difference gradient checker used to verify every backward pass.
//!
//! Broadcasting is deliberately narrow: a binary operation accepts a right
//! operand whose shape equals a trailing suffix of the left operand's shape
//! (for example `[B, T, K] + [K]`). Nothing else broadcasts.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Sampling distribution for [`Tensor::random`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dist {
    Uniform { low: f64, high: f64 },
    Gaussian { mean: f64, std: f64 },
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every extent must be at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Tensor with every element equal to `value`.
    pub fn fill(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    /// Zero tensor. Panics on a zero extent; use [`Tensor::fill`] for
    /// untrusted shapes.
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::fill(shape, 0.0).expect("zeros: invalid shape")
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("shape holds {n} elements but {} were given", data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Tensor::fill(&[n, n], 0.0)?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    /// I.i.d. samples from `dist`, reproducible from the generator state.
    pub fn random(shape: &[usize], dist: Dist, rng: &mut Rng) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = match dist {
            Dist::Uniform { low, high } => {
                if !(low < high) {
                    return Err(Error::InvalidRange(format!(
                        "uniform bounds need low < high, got [{low}, {high}]"
                    )));
                }
                (0..n).map(|_| rng.uniform(low, high)).collect()
            }
            Dist::Gaussian { mean, std } => {
                if !(std >= 0.0) {
                    return Err(Error::InvalidRange(format!(
                        "gaussian std must be non-negative, got {std}"
                    )));
                }
                (0..n).map(|_| rng.gaussian(mean, std)).collect()
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::EmptyInput("nothing to stack".into()))?;
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::ShapeMismatch(format!("stack: {:?} vs {:?}", t.shape, first.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::from_vec(&shape, data)
    }

    /// Splits along the leading axis.
    pub fn unstack(&self) -> Vec<Tensor> {
        let Some((&n, rest)) = self.shape.split_first() else {
            return Vec::new();
        };
        if n == 0 {
            return Vec::new();
        }
        let step = self.data.len() / n;
        self.data
            .chunks(step.max(1))
            .map(|c| Tensor {
                shape: rest.to_vec(),
                data: c.to_vec(),
            })
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Turns a NaN or infinity into an explicit error.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: element {i} is {}",
                self.data[i]
            ))),
        }
    }

    /// In-place `self += scale * other`; shapes must match exactly.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "add_scaled {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner extents {k} and {k2} differ"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm::nn(m, k, n, &self.data, &other.data, &mut out);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    fn broadcast_zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let r = other.rank();
        if r > self.rank() || self.shape[self.rank() - r..] != other.shape[..] {
            return Err(Error::ShapeMismatch(format!(
                "{:?} does not broadcast onto {:?} (trailing-dimension rule)",
                other.shape, self.shape
            )));
        }
        let n = other.data.len();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &a)| f(a, other.data[i % n]))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcast_zip(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcast_zip(other, |a, b| a * b)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| x.max(0.0))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    /// Softmax over the last dimension.
    pub fn softmax_rows(&self) -> Tensor {
        let k = *self.shape.last().expect("softmax of rank-0 tensor");
        let mut data = self.data.clone();
        for row in data.chunks_mut(k) {
            softmax_in_place(row);
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Element-wise operations addressable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ewise {
    Add,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    SoftmaxRows,
}

/// Applies `op` to one (unary) or two (binary) operands.
pub fn ewise(op: Ewise, args: &[&Tensor]) -> Result<Tensor> {
    let arity = match op {
        Ewise::Add | Ewise::Mul => 2,
        _ => 1,
    };
    if args.len() != arity {
        return Err(Error::InvalidArgument(format!(
            "{op:?} takes {arity} operand(s), got {}",
            args.len()
        )));
    }
    Ok(match op {
        Ewise::Add => args[0].add(args[1])?,
        Ewise::Mul => args[0].mul(args[1])?,
        Ewise::Sigmoid => args[0].sigmoid(),
        Ewise::Tanh => args[0].tanh(),
        Ewise::Relu => args[0].relu(),
        Ewise::SoftmaxRows => args[0].softmax_rows(),
    })
}

/// Maximum over coordinates of `|central difference - analytic| / max(1, |analytic|)`.
///
/// `f` is evaluated twice per coordinate with `params[i] ± eps`.
pub fn finite_diff_check<F>(mut f: F, params: &Tensor, analytic: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if params.shape() != analytic.shape() {
        return Err(Error::ShapeMismatch(format!(
            "params {:?} vs gradient {:?}",
            params.shape(),
            analytic.shape()
        )));
    }
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let x = params.data[i];
        probe.data[i] = x + eps;
        let up = f(&probe);
        probe.data[i] = x - eps;
        let down = f(&probe);
        probe.data[i] = x;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is non-finite around coordinate {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data[i];
        worst = worst.max((numeric - a).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// Seeded deterministic random stream (ChaCha8), identical across platforms.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for item `index` of a job seeded with `seed`.
    ///
    /// The result depends only on `(seed, index)`, so per-item work can be
    /// split across workers without changing any output.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(index.wrapping_add(1));
        Rng { seed, inner }
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.inner.gen::<f64>()
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        if std == 0.0 {
            return mean;
        }
        let n = Normal::new(mean, std).expect("finite gaussian parameters");
        n.sample(&mut self.inner)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen::<f64>() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Small dense kernels on row-major slices. All of them accumulate into `c`.
pub(crate) mod gemm {
    //! Accumulating products on contiguous row-major buffers; transposed
    //! operands are expressed through strides.

    fn run(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (isize, isize), b: &[f64], (rsb, csb): (isize, isize), c: &mut [f64]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
        if m == 0 || n == 0 || k == 0 {
            return;
        }
        // SAFETY: the asserted lengths cover every index reached with these
        // strides, and `c` does not alias `a` or `b` (distinct borrows).
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    /// `c[m×n] += a[m×k] · b[k×n]`
    pub fn nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        run(m, k, n, a, (k as isize, 1), b, (n as isize, 1), c);
    }

    /// `c[m×n] += aᵀ · b` with `a` stored as `[k×m]` and `b` as `[k×n]`.
    pub fn tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        run(m, k, n, a, (1, m as isize), b, (n as isize, 1), c);
    }

    /// `c[m×n] += a · bᵀ` with `a` stored as `[m×k]` and `b` as `[n×k]`.
    pub fn nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        run(m, k, n, a, (k as isize, 1), b, (1, k as isize), c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn fill_examples() {
        assert_eq!(Tensor::fill(&[2, 2], 0.0).unwrap().data(), &[0.0; 4]);
        assert_eq!(Tensor::fill(&[1], 7.5).unwrap().data(), &[7.5]);
        let t = Tensor::fill(&[3, 1, 2], 1.0).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.data().iter().all(|&x| x == 1.0));
        assert!(matches!(
            Tensor::fill(&[2, 0], 1.0),
            Err(Error::InvalidShape { .. })
        ));
    }

    #[test]
    fn random_examples() {
        let mut rng = Rng::new(1);
        let t = Tensor::random(&[100], Dist::Uniform { low: -1.0, high: 1.0 }, &mut rng).unwrap();
        assert!(t.data().iter().all(|x| (-1.0..=1.0).contains(x)));

        let z = Tensor::random(&[4], Dist::Gaussian { mean: 0.0, std: 0.0 }, &mut rng).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);

        let mut rng = Rng::new(7);
        let u = Tensor::random(&[100_000], Dist::Uniform { low: 0.0, high: 1.0 }, &mut rng).unwrap();
        assert!((u.mean() - 0.5).abs() < 0.01);

        assert!(matches!(
            Tensor::random(&[2], Dist::Uniform { low: 1.0, high: 1.0 }, &mut rng),
            Err(Error::InvalidRange(_))
        ));
    }

    #[test]
    fn random_is_reproducible() {
        let d = Dist::Gaussian { mean: 0.3, std: 2.0 };
        let a = Tensor::random(&[64], d, &mut Rng::new(99)).unwrap();
        let b = Tensor::random(&[64], d, &mut Rng::new(99)).unwrap();
        assert_eq!(a, b);
        let c = Tensor::random(&[64], d, &mut Rng::derive(99, 3)).unwrap();
        let e = Tensor::random(&[64], d, &mut Rng::derive(99, 3)).unwrap();
        assert_eq!(c, e);
        assert_ne!(a, c);
    }

    #[test]
    fn matmul_examples() {
        let mut rng = Rng::new(4);
        let x = Tensor::random(&[3, 5], Dist::Uniform { low: -1.0, high: 1.0 }, &mut rng).unwrap();
        assert_eq!(Tensor::identity(3).unwrap().matmul(&x).unwrap(), x);

        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);

        assert!(matches!(a.matmul(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_matches_triple_loop_up_to_32() {
        let mut rng = Rng::new(11);
        let u = Dist::Uniform { low: -1.0, high: 1.0 };
        for &(m, k, n) in &[(8, 8, 8), (1, 32, 1), (32, 32, 32), (5, 17, 29), (32, 1, 7)] {
            let a = Tensor::random(&[m, k], u, &mut rng).unwrap();
            let b = Tensor::random(&[k, n], u, &mut rng).unwrap();
            let got = a.matmul(&b).unwrap();
            for (x, y) in got.data().iter().zip(naive_matmul(&a, &b)) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn transposed_kernels_agree_with_nn() {
        let mut rng = Rng::new(5);
        let u = Dist::Uniform { low: -1.0, high: 1.0 };
        let (m, k, n) = (6, 9, 5);
        let a = Tensor::random(&[m, k], u, &mut rng).unwrap();
        let b = Tensor::random(&[k, n], u, &mut rng).unwrap();
        let reference = a.matmul(&b).unwrap();

        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a.data()[i * k + p];
            }
        }
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b.data()[p * n + j];
            }
        }
        let mut c1 = vec![0.0; m * n];
        gemm::tn(m, k, n, &at, b.data(), &mut c1);
        let mut c2 = vec![0.0; m * n];
        gemm::nt(m, k, n, a.data(), &bt, &mut c2);
        for ((x, y), z) in reference.data().iter().zip(&c1).zip(&c2) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn ewise_examples() {
        let t = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(ewise(Ewise::Relu, &[&t]).unwrap().data(), &[0.0, 0.0, 2.0]);
        let z = Tensor::fill(&[2, 4], 0.0).unwrap();
        assert!(z.softmax_rows().data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let s = Tensor::fill(&[1], 0.0).unwrap().sigmoid();
        assert_eq!(s.data(), &[0.5]);

        let m = Tensor::fill(&[2, 3], 1.0).unwrap();
        let row = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ewise(Ewise::Add, &[&m, &row]).unwrap().data(), &[2., 3., 4., 2., 3., 4.]);
        let col = Tensor::fill(&[2], 1.0).unwrap();
        assert!(matches!(m.add(&col), Err(Error::ShapeMismatch(_))));
        assert!(ewise(Ewise::Mul, &[&m]).is_err());
    }

    #[test]
    fn softmax_rows_are_positive_distributions() {
        let mut rng = Rng::new(8);
        let t = Tensor::random(&[20, 9], Dist::Gaussian { mean: 0.0, std: 30.0 }, &mut rng).unwrap();
        for row in t.softmax_rows().data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn finite_values_are_checkable() {
        let mut t = Tensor::fill(&[3], 1.0).unwrap();
        assert!(t.check_finite("t").is_ok());
        t.data_mut()[1] = f64::NAN;
        assert!(matches!(t.check_finite("t"), Err(Error::Numeric(_))));
    }

    #[test]
    fn finite_diff_examples() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let sq = |p: &Tensor| p.data()[0] * p.data()[0];
        let good = Tensor::from_vec(&[1], vec![6.0]).unwrap();
        assert!(finite_diff_check(sq, &x, &good, 1e-5).unwrap() < 1e-8);

        let bad = Tensor::from_vec(&[1], vec![6.1]).unwrap();
        let err = finite_diff_check(sq, &x, &bad, 1e-5).unwrap();
        assert!((err - 0.1 / 6.1).abs() < 1e-6, "{err}");
        assert!((err - 0.0167).abs() < 5e-4);

        let mut rng = Rng::new(21);
        let p = Tensor::random(&[12], Dist::Gaussian { mean: 0.0, std: 2.0 }, &mut rng).unwrap();
        let grad = p.map(|x| sigmoid(x) * (1.0 - sigmoid(x)));
        let err = finite_diff_check(|q| q.sigmoid().sum(), &p, &grad, 1e-5).unwrap();
        assert!(err < 1e-6);

        let nan = |_: &Tensor| f64::NAN;
        assert!(matches!(finite_diff_check(nan, &x, &good, 1e-5), Err(Error::Numeric(_))));
    }
}
