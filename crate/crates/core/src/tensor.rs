//! Dense rank-4 tensors in N, C, H, W order.
//!
//! Storage is shared behind an `Arc`, so cloning a tensor is cheap and a
//! tensor never changes after it is built.

use std::fmt::Debug;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar element type. Implemented for `f32` (inference) and `f64`
/// (gradient checking).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    /// Dtype tag used by the tensor file format.
    const DTYPE: u8;

    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("finite conversion")
    }
}

impl Real for f32 {
    const DTYPE: u8 = 0;
}

impl Real for f64 {
    const DTYPE: u8 = 1;
}

pub type Dims = [usize; 4];

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Dims,
    data: Arc<Vec<T>>,
}

impl<T> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("len", &self.data.len())
            .finish()
    }
}

pub fn numel(dims: &Dims) -> usize {
    dims.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != numel(&dims) {
            return Err(Error::shape(
                "tensor",
                format!(
                    "dims {:?} need {} values, got {}",
                    dims,
                    numel(&dims),
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            dims,
            data: Arc::new(data),
        })
    }

    /// Build without checking the length. Callers in this crate guarantee it.
    pub(crate) fn from_raw(dims: Dims, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), numel(&dims));
        Tensor {
            dims,
            data: Arc::new(data),
        }
    }

    pub fn full(dims: Dims, value: T) -> Self {
        Self::from_raw(dims, vec![value; numel(&dims)])
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: Dims) -> Self {
        Self::full(dims, T::one())
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(numel(&dims));
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Self::from_raw(dims, data)
    }

    /// A 1×C×1×1 tensor holding a per-channel vector.
    pub fn channel_vector(values: Vec<T>) -> Self {
        Self::from_raw([1, values.len(), 1, 1], values)
    }

    pub fn scalar(value: T) -> Self {
        Self::from_raw([1, 1, 1, 1], vec![value])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
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

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, c, h, w] = self.dims;
        ((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]
    }

    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn to_scalar(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::NotScalar(self.dims));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, dims: Dims) -> Result<Self> {
        if numel(&dims) != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.dims, dims),
            ));
        }
        Ok(Tensor {
            dims,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape(
                "zip",
                format!("dims {:?} vs {:?}", self.dims, other.dims),
            ));
        }
        Ok(Self::from_raw(
            self.dims,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_raw(
            self.dims,
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Swap the H and W axes.
    pub fn transpose_hw(&self) -> Self {
        let [n, c, h, w] = self.dims;
        Self::from_fn([n, c, w, h], |[i, j, y, x]| self.at([i, j, x, y]))
    }

    /// Largest elementwise relative difference, using `max(|a|, |b|, 1)` as the scale.
    pub fn max_rel_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "max_rel_diff on mismatched dims");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| {
                let (a, b) = (a.as_f64(), b.as_f64());
                (a - b).abs() / a.abs().max(b.abs()).max(1.0)
            })
            .fold(0.0, f64::max)
    }
}
