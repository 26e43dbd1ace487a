use super::{check_channels, join, Block, Pointwise};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::upsample_grid;
use crate::params::ParamSpec;
use crate::tensor::Real;

/// Dynamic upsampler: a 1×1 conv predicts a (row, col) offset for every
/// output sub-pixel, the offsets (times a static scope factor) perturb the
/// regular bilinear grid, and the input is read back by bilinear sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct DySampleParams {
    pub prefix: String,
    pub channels: usize,
    pub factor: usize,
    pub scope: f64,
}

impl DySampleParams {
    pub const DEFAULT_SCOPE: f64 = 0.25;

    pub fn new(prefix: impl Into<String>, channels: usize, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("dysample factor must be at least 1".into()));
        }
        Ok(DySampleParams {
            prefix: prefix.into(),
            channels,
            factor,
            scope: Self::DEFAULT_SCOPE,
        })
    }

    fn offset_conv(&self) -> Pointwise {
        Pointwise {
            prefix: join(&self.prefix, "offset"),
            in_channels: self.channels,
            out_channels: 2 * self.factor * self.factor,
        }
    }

    /// Sampling coordinates, N×2×(sH)×(sW), in input pixel units.
    pub fn coords<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        check_channels(g, x, self.channels, "dysample")?;
        let [n, _, h, w] = g.dims(x);
        let raw = self.offset_conv().forward(g, x)?;
        let scaled = g.scale(&raw, T::of(self.scope));
        let offsets = g.pixel_shuffle(&scaled, self.factor)?;
        let grid = g.constant(upsample_grid::<T>(n, h, w, self.factor));
        g.add(&grid, &offsets)
    }
}

impl Block for DySampleParams {
    fn param_specs(&self) -> Vec<ParamSpec> {
        self.offset_conv().specs()
    }

    fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        let coords = self.coords(g, x)?;
        g.grid_sample_bilinear(x, &coords)
    }
}
