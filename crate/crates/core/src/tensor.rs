//! Dense 4-D tensors in (batch, channel, height, width) order.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn n(&self) -> usize {
        self.0[0]
    }
    pub const fn c(&self) -> usize {
        self.0[1]
    }
    pub const fn h(&self) -> usize {
        self.0[2]
    }
    pub const fn w(&self) -> usize {
        self.0[3]
    }

    pub const fn numel(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2] * self.0[3]
    }

    /// Elements in one (channel, height, width) sample.
    pub const fn sample_len(&self) -> usize {
        self.0[1] * self.0[2] * self.0[3]
    }

    pub const fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    pub const fn with_c(self, c: usize) -> Self {
        Shape([self.0[0], c, self.0[2], self.0[3]])
    }

    pub const fn with_hw(self, h: usize, w: usize) -> Self {
        Shape([self.0[0], self.0[1], h, w])
    }

    /// Checks full equality, naming the first axis that differs.
    pub fn expect_eq(&self, other: &Shape, op: &'static str) -> Result<()> {
        const AXES: [&str; 4] = ["N", "C", "H", "W"];
        for (i, axis) in AXES.iter().enumerate() {
            if self.0[i] != other.0[i] {
                return Err(Error::dim(op, axis, self.0[i], other.0[i]));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::dim("Tensor::from_vec", "len", shape.numel(), data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n() {
            for c in 0..shape.c() {
                for y in 0..shape.h() {
                    for x in 0..shape.w() {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::from_f64_lossy(rng.gen_range(lo..hi)))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c() + c) * s.h() + y) * s.w() + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Reinterprets the buffer under a new shape of equal size.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::dim("reshape", "len", self.data.len(), shape.numel()));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.shape.expect_eq(&other.shape, "zip_map")?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len().max(1)).unwrap()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of one batch entry as an N = 1 tensor.
    pub fn sample(&self, n: usize) -> Self {
        let len = self.shape.sample_len();
        Tensor {
            shape: Shape::new(1, self.shape.c(), self.shape.h(), self.shape.w()),
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Stacks equally-shaped tensors along the batch axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::usage("stack of zero tensors"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            if ts.c() != s.c() {
                return Err(Error::dim("stack", "C", s.c(), ts.c()));
            }
            if ts.h() != s.h() {
                return Err(Error::dim("stack", "H", s.h(), ts.h()));
            }
            if ts.w() != s.w() {
                return Err(Error::dim("stack", "W", s.w(), ts.w()));
            }
            data.extend_from_slice(&t.data);
            n += ts.n();
        }
        Ok(Tensor {
            shape: Shape::new(n, s.c(), s.h(), s.w()),
            data,
        })
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let s = first.shape;
        for t in items {
            let ts = t.shape;
            if ts.n() != s.n() {
                return Err(Error::dim("concat", "N", s.n(), ts.n()));
            }
            if ts.h() != s.h() {
                return Err(Error::dim("concat", "H", s.h(), ts.h()));
            }
            if ts.w() != s.w() {
                return Err(Error::dim("concat", "W", s.w(), ts.w()));
            }
        }
        let c_total: usize = items.iter().map(|t| t.shape.c()).sum();
        let out_shape = s.with_c(c_total);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n() {
            for t in items {
                let len = t.shape.sample_len();
                data.extend_from_slice(&t.data[n * len..(n + 1) * len]);
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Channel range `[start, start + count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let s = self.shape;
        if start + count > s.c() {
            return Err(Error::dim("slice_channels", "C", s.c(), start + count));
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n() * count * plane);
        for n in 0..s.n() {
            let base = (n * s.c() + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Tensor {
            shape: s.with_c(count),
            data,
        })
    }

    /// Per-pixel mean over channels: (N, C, H, W) -> (N, 1, H, W).
    pub fn channel_mean(&self) -> Result<Self> {
        let s = self.shape;
        if s.c() == 0 {
            return Err(Error::usage("channel_mean needs at least one channel"));
        }
        let plane = s.plane();
        let inv = T::one() / T::from_usize(s.c()).unwrap();
        let mut out = Tensor::zeros(s.with_c(1));
        for n in 0..s.n() {
            let dst = &mut out.data[n * plane..(n + 1) * plane];
            for c in 0..s.c() {
                let src = &self.data[(n * s.c() + c) * plane..(n * s.c() + c + 1) * plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += v;
                }
            }
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        Ok(out)
    }

    /// Converts element type through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_preserves_order() {
        let a = Tensor::<f64>::full(Shape::new(2, 3, 8, 8), 1.0);
        let b = Tensor::<f64>::full(Shape::new(2, 5, 8, 8), 2.0);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 8, 8, 8));
        assert_eq!(c.at(1, 2, 3, 3), 1.0);
        assert_eq!(c.at(1, 3, 3, 3), 2.0);
        assert_eq!(c.slice_channels(3, 5).unwrap(), b);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 5));
        match Tensor::concat_channels(&[&a, &b]) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "W"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn channel_mean_of_two_constants() {
        let a = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 1.0);
        let b = Tensor::<f64>::full(Shape::new(1, 1, 3, 3), 4.0);
        let m = Tensor::concat_channels(&[&a, &b]).unwrap().channel_mean().unwrap();
        assert!(m.data().iter().all(|&v| v == 2.5));
        assert_eq!(a.channel_mean().unwrap(), a);
    }

    #[test]
    fn channel_mean_matches_direct_sum() {
        let t = Tensor::<f64>::from_fn(Shape::new(2, 5, 3, 4), |[n, c, y, x]| {
            ((n * 31 + c * 7 + y * 3 + x) as f64 * 0.713).sin()
        });
        let m = t.channel_mean().unwrap();
        for n in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let direct: f64 = (0..5).map(|c| t.at(n, c, y, x)).sum::<f64>() / 5.0;
                    assert!((m.at(n, 0, y, x) - direct).abs() < 1e-15);
                }
            }
        }
    }
}
