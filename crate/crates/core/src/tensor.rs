//! Minimal dense n-dimensional array in row-major order.
//!
//! Storage is `f32` for training and inference; every operation is also
//! available at `f64` (via the [`Scalar`] trait) so finite-difference
//! gradient checks are not noise-limited.

use crate::error::{Error, Result};
use std::fmt::Debug;
use std::iter::Sum;

/// Element type the numeric code is generic over. Implemented for `f32`
/// and `f64` only.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Sum + Debug + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor. `product(shape) == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        assert!(shape.iter().all(|&e| e >= 1), "every extent must be >= 1");
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim("tensor extents must be >= 1"));
        }
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar_filled(shape: &[usize], v: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = v);
        t
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides derived from the shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let strides = self.strides();
        idx.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    pub fn at(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Reshape without moving data. The new shape must describe the same
    /// number of elements.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip(other, |a, b| a * b)
    }

    pub fn max(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip(other, |a, b| if a >= b { a } else { b })
    }

    pub fn add_scalar(&self, v: T) -> Tensor<T> {
        self.map(|x| x + v)
    }

    pub fn scale(&self, v: T) -> Tensor<T> {
        self.map(|x| x * v)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    /// Smallest index attaining the maximum of a rank-1 tensor.
    pub fn argmax(&self) -> Result<usize> {
        if self.rank() != 1 {
            return Err(Error::dim("argmax requires a rank-1 tensor"));
        }
        if self.data.is_empty() {
            return Err(Error::EmptyInput("argmax of empty tensor".into()));
        }
        let mut best = 0usize;
        for (i, &v) in self.data.iter().enumerate().skip(1) {
            if v > self.data[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

/// Standard matrix product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::dim("matmul requires rank-2 tensors"));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {} vs {}",
            k, k2
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        for p in 0..k {
            let av = ad[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            let orow = &mut od[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// A tensor constrained to 4 dimensions with fixed axis semantics
/// (height, width, channels, batch).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Scalar = f32>(Tensor<T>);

impl<T: Scalar> FeatureMap<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        if t.rank() != 4 {
            return Err(Error::dim(format!(
                "feature map must be rank 4, got rank {}",
                t.rank()
            )));
        }
        Ok(FeatureMap(t))
    }

    pub fn zeros(h: usize, w: usize, c: usize, s: usize) -> Self {
        FeatureMap(Tensor::zeros(&[h, w, c, s]))
    }

    pub fn from_vec(h: usize, w: usize, c: usize, s: usize, data: Vec<T>) -> Result<Self> {
        FeatureMap::new(Tensor::from_vec(&[h, w, c, s], data)?)
    }

    /// (height, width, channels, batch)
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2], s[3])
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, c: usize, b: usize) -> usize {
        let (_, w, nc, ns) = self.dims();
        ((i * w + j) * nc + c) * ns + b
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, c: usize, b: usize) -> T {
        self.0.data()[self.offset(i, j, c, b)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, b: usize, v: T) {
        let o = self.offset(i, j, c, b);
        self.0.data_mut()[o] = v;
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    /// Flatten one batch member to a vector in (h, w, c) row-major order.
    pub fn flatten_sample(&self, b: usize) -> Vec<T> {
        let (h, w, c, _) = self.dims();
        let mut out = Vec::with_capacity(h * w * c);
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    out.push(self.at(i, j, k, b));
                }
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap(self.0.cast())
    }
}
