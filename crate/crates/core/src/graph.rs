//! The op vocabulary layers are written against.
//!
//! Layer code is generic over [`Graph`], so one forward definition runs either
//! eagerly on tensors ([`Eval`]) or recorded for reverse-mode differentiation
//! ([`crate::autodiff::Tape`]).

use crate::error::Result;
use crate::ops::{self, Activation, ConvSpec, Pad2d};
use crate::params::ParamStore;
use crate::tensor::{Dims, Real, Tensor};

pub trait Graph<T: Real> {
    type V: Clone;

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;

    fn dims(&self, v: &Self::V) -> Dims {
        self.value(v).dims()
    }

    fn constant(&mut self, t: Tensor<T>) -> Self::V;

    fn param(&mut self, name: &str) -> Result<Self::V>;

    fn conv2d(
        &mut self,
        x: &Self::V,
        w: &Self::V,
        b: Option<&Self::V>,
        spec: &ConvSpec,
    ) -> Result<Self::V>;

    fn pad(&mut self, x: &Self::V, p: Pad2d) -> Self::V;

    fn avg_pool(
        &mut self,
        x: &Self::V,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Self::V>;

    fn max_pool(
        &mut self,
        x: &Self::V,
        window: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self::V>;

    fn activation(&mut self, x: &Self::V, kind: Activation) -> Self::V;

    fn hadamard(&mut self, x: &Self::V, y: &Self::V) -> Result<Self::V>;

    fn add(&mut self, x: &Self::V, y: &Self::V) -> Result<Self::V>;

    fn scale(&mut self, x: &Self::V, factor: T) -> Self::V;

    fn channel_affine(&mut self, x: &Self::V, scale: &Self::V, shift: &Self::V) -> Result<Self::V>;

    fn concat_channels(&mut self, parts: &[&Self::V]) -> Result<Self::V>;

    fn slice_channels(&mut self, x: &Self::V, start: usize, len: usize) -> Result<Self::V>;

    fn broadcast_expand(&mut self, x: &Self::V, target: Dims) -> Result<Self::V>;

    fn upsample_nearest(&mut self, x: &Self::V, factor: usize) -> Result<Self::V>;

    fn grid_sample_bilinear(&mut self, x: &Self::V, coords: &Self::V) -> Result<Self::V>;

    fn pixel_shuffle(&mut self, x: &Self::V, s: usize) -> Result<Self::V>;

    /// Sum of all elements as a 1×1×1×1 tensor.
    fn sum(&mut self, x: &Self::V) -> Self::V;
}

/// Eager evaluation; intermediates are dropped as soon as the caller drops them.
pub struct Eval<'a, T: Real> {
    params: &'a ParamStore<T>,
}

impl<'a, T: Real> Eval<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Eval { params }
    }
}

impl<T: Real> Graph<T> for Eval<'_, T> {
    type V = Tensor<T>;

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn param(&mut self, name: &str) -> Result<Tensor<T>> {
        self.params.require(name).cloned()
    }

    fn conv2d(
        &mut self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: Option<&Tensor<T>>,
        spec: &ConvSpec,
    ) -> Result<Tensor<T>> {
        ops::conv2d(x, w, b, spec)
    }

    fn pad(&mut self, x: &Tensor<T>, p: Pad2d) -> Tensor<T> {
        ops::pad(x, p)
    }

    fn avg_pool(
        &mut self,
        x: &Tensor<T>,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Tensor<T>> {
        ops::avg_pool(x, window, stride)
    }

    fn max_pool(
        &mut self,
        x: &Tensor<T>,
        window: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Tensor<T>> {
        ops::max_pool(x, window, stride, padding)
    }

    fn activation(&mut self, x: &Tensor<T>, kind: Activation) -> Tensor<T> {
        ops::activation(x, kind)
    }

    fn hadamard(&mut self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        ops::hadamard(x, y)
    }

    fn add(&mut self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        ops::add(x, y)
    }

    fn scale(&mut self, x: &Tensor<T>, factor: T) -> Tensor<T> {
        ops::scale(x, factor)
    }

    fn channel_affine(
        &mut self,
        x: &Tensor<T>,
        scale: &Tensor<T>,
        shift: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        ops::channel_affine(x, scale, shift)
    }

    fn concat_channels(&mut self, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        ops::concat_channels(parts)
    }

    fn slice_channels(&mut self, x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
        ops::slice_channels(x, start, len)
    }

    fn broadcast_expand(&mut self, x: &Tensor<T>, target: Dims) -> Result<Tensor<T>> {
        ops::broadcast_expand(x, target)
    }

    fn upsample_nearest(&mut self, x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
        ops::upsample_nearest(x, factor)
    }

    fn grid_sample_bilinear(&mut self, x: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
        ops::grid_sample_bilinear(x, coords)
    }

    fn pixel_shuffle(&mut self, x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
        ops::pixel_shuffle(x, s)
    }

    fn sum(&mut self, x: &Tensor<T>) -> Tensor<T> {
        Tensor::scalar(x.sum())
    }
}
