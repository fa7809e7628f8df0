//! Dense row-major tensors and the handful of kernels the encoder needs,
//! generic over `f32` (training) and `f64` (gradient checking).

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn c(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        Self {
            shape: shape.to_vec(),
            data: (0..shape.iter().product()).map(|_| T::c(dist.sample(rng))).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x.f64() * x.f64()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| U::c(x.f64())).collect() }
    }
}

/// Named access to every trainable tensor, in a stable order.
pub trait ParamSet<T: Scalar> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill_zero();
        }
    }

    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    fn scale(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Affine map `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(d_in: usize, d_out: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self { weight: Tensor::normal(&[d_in, d_out], std, rng), bias: Tensor::zeros(&[d_out]) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { weight: self.weight.zeros_like(), bias: self.bias.zeros_like() }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape[1]
    }

    /// Rows of `x` (`[n, in]`) to rows of `[n, out]`.
    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let mut y = matmul(x, n, self.d_in(), &self.weight.data, self.d_out());
        for r in y.chunks_mut(self.d_out()) {
            for (v, &b) in r.iter_mut().zip(&self.bias.data) {
                *v += b;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dx`.
    pub fn backward(&self, x: &[T], dy: &[T], n: usize, grad: &mut Dense<T>) -> Vec<T> {
        let (din, dout) = (self.d_in(), self.d_out());
        matmul_at_b_acc(x, dy, n, din, dout, &mut grad.weight.data);
        for r in dy.chunks(dout) {
            for (g, &v) in grad.bias.data.iter_mut().zip(r) {
                *g += v;
            }
        }
        matmul_a_bt(dy, n, dout, &self.weight.data, din)
    }

    pub fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn push_tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

/// `a [m,k] * b [k,n]`.
pub fn matmul<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `acc += a^T b` with `a [m,k]`, `b [m,n]`, `acc [k,n]`.
pub fn matmul_at_b_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, acc: &mut [T]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let arow = &mut acc[p * n..(p + 1) * n];
            for (c, &bv) in arow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// `a [m,k] * b^T` with `b [n,k]`.
pub fn matmul_a_bt<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub const LN_EPS: f64 = 1e-12;

/// Row-wise layer norm; returns `(y, xhat, inv_std)`.
pub fn layer_norm<T: Scalar>(x: &[T], d: usize, gain: &[T], bias: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); n];
    let dn = T::c(d as f64);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + T::c(LN_EPS)).sqrt();
        inv[r] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = gain[j] * h + bias[j];
        }
    }
    (y, xhat, inv)
}

pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv: &[T],
    d: usize,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let n = dy.len() / d;
    let dn = T::c(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for j in 0..d {
            dgain[j] += dyr[j] * xr[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xr[j];
        }
        m1 = m1 / dn;
        m2 = m2 / dn;
        for j in 0..d {
            dx[r * d + j] = inv[r] * (dxhat[j] - m1 - xr[j] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let inner = T::c(GELU_C) * (x + T::c(0.044715) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let inner = T::c(GELU_C) * (x + T::c(0.044715) * x * x * x);
    let t = inner.tanh();
    let dinner = T::c(GELU_C) * (T::one() + T::c(3.0 * 0.044715) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// In-place softmax; returns log of the normalizer.
pub fn softmax_in_place<T: Scalar>(v: &mut [T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x = *x / sum;
    }
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, 2, 2, &b, 2), vec![19.0, 22.0, 43.0, 50.0]);
        assert_eq!(matmul_a_bt(&a, 2, 2, &b, 2), vec![17.0, 23.0, 39.0, 53.0]);
        let mut acc = vec![0.0; 4];
        matmul_at_b_acc(&a, &b, 2, 2, 2, &mut acc);
        assert_eq!(acc, vec![26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let x = [1.0f64, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 8.0];
        let (y, _, _) = layer_norm(&x, 4, &[1.0; 4], &[0.0; 4]);
        for r in y.chunks(4) {
            let m: f64 = r.iter().sum::<f64>() / 4.0;
            let v: f64 = r.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sigmoid_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!((sigmoid(800.0f64) - 1.0).abs() < 1e-15);
    }
}
