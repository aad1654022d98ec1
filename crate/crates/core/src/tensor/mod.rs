//! Dense row-major tensors and the reverse-mode tape built on top of them.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and inference and in `f64` for finite-difference gradient checks.

mod conv;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use conv::{conv2d, conv2d_grad_input, conv2d_grad_weight};
pub use tape::{Graph, Var};

/// Floating point element type.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        f.debug_list()
            .entries(self.data.iter().take(PREVIEW))
            .finish()?;
        if self.data.len() > PREVIEW {
            write!(f, " ..({} more)", self.data.len() - PREVIEW)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    /// Rank-0 tensor.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at each flat (row-major) index.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise binary op with suffix broadcasting (see [`broadcast_shape`]).
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        let shape = broadcast_shape(&self.shape, &other.shape)?;
        let n: usize = shape.iter().product();
        let (la, lb) = (self.data.len(), other.data.len());
        let data = if la == n && lb == n {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect()
        } else {
            (0..n)
                .map(|i| f(self.data[i % la], other.data[i % lb]))
                .collect()
        };
        Ok(Tensor { shape, data })
    }

    /// Sum with a fixed left-to-right accumulation order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Adds `other` (same shape) in place.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_assign {:?} += {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Sums a `[C, rest..]` tensor over its leading axis, giving `[rest..]`.
    pub fn sum_leading(&self) -> Result<Self> {
        let (&c, rest) = self
            .shape
            .split_first()
            .ok_or_else(|| Error::Shape("sum_leading on a rank-0 tensor".into()))?;
        let plane = rest.iter().product::<usize>();
        let mut out = vec![T::zero(); plane];
        for ch in 0..c {
            for (o, &v) in out.iter_mut().zip(&self.data[ch * plane..(ch + 1) * plane]) {
                *o = *o + v;
            }
        }
        Tensor::new(rest.to_vec(), out)
    }

    /// Sums a `[C, rest..]` tensor over everything but the leading axis, giving `[C]`.
    pub fn sum_per_channel(&self) -> Result<Self> {
        let (&c, _) = self
            .shape
            .split_first()
            .ok_or_else(|| Error::Shape("sum_per_channel on a rank-0 tensor".into()))?;
        let plane = self.data.len() / c.max(1);
        let out = self
            .data
            .chunks(plane.max(1))
            .take(c)
            .map(|ch| ch.iter().fold(T::zero(), |acc, &v| acc + v))
            .collect();
        Tensor::new(vec![c], out)
    }

    /// Copy of channel `c` of a `[C, H, W]` tensor as `[H, W]`.
    pub fn channel(&self, c: usize) -> Result<Self> {
        if self.rank() != 3 || c >= self.shape[0] {
            return Err(Error::Shape(format!(
                "channel {c} of tensor {:?}",
                self.shape
            )));
        }
        let plane = self.shape[1] * self.shape[2];
        Tensor::new(
            vec![self.shape[1], self.shape[2]],
            self.data[c * plane..(c + 1) * plane].to_vec(),
        )
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    /// Forward differences along the last axis; the final column is zero.
    pub fn diff_x(&self) -> Result<Self> {
        let (h, w) = spatial_dims(&self.shape)?;
        let mut out = vec![T::zero(); self.data.len()];
        for (src, dst) in self.data.chunks(w).zip(out.chunks_mut(w)) {
            for j in 0..w - 1 {
                dst[j] = src[j + 1] - src[j];
            }
        }
        debug_assert!(h >= 2);
        Tensor::new(self.shape.clone(), out)
    }

    /// Forward differences along the second-to-last axis; the final row is zero.
    pub fn diff_y(&self) -> Result<Self> {
        let (h, w) = spatial_dims(&self.shape)?;
        let mut out = vec![T::zero(); self.data.len()];
        for (src, dst) in self.data.chunks(h * w).zip(out.chunks_mut(h * w)) {
            for i in 0..h - 1 {
                for j in 0..w {
                    dst[i * w + j] = src[(i + 1) * w + j] - src[i * w + j];
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }
}

/// Result shape of an elementwise binary op.
///
/// Shapes broadcast when they are equal or when one is a trailing suffix of
/// the other (a single-element tensor is a suffix of everything). This covers
/// the `[H, W]` against `[3, H, W]` case used by the reflectance division.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b || nb == 1 && na >= 1 {
        return Ok(a.to_vec());
    }
    if na == 1 {
        return Ok(b.to_vec());
    }
    if a.len() >= b.len() && a.ends_with(b) {
        return Ok(a.to_vec());
    }
    if b.len() > a.len() && b.ends_with(a) {
        return Ok(b.to_vec());
    }
    Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")))
}

fn spatial_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [.., h, w] if *h >= 2 && *w >= 2 => Ok((*h, *w)),
        _ => Err(Error::Shape(format!(
            "spatial gradient needs H >= 2 and W >= 2, got {shape:?}"
        ))),
    }
}

/// Logistic function.
pub fn sigmoid<T: Real>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
