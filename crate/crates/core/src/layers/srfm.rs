//! Strip receptive field module, its residual sub-block, and the C3k2 wrapper.
//!
//! Data flow for one SRFM, all convs channel-preserving with "same" padding:
//!
//! ```text
//! F_sq = DW k×k (X)
//! F_h  = DW 1×k_H (F_sq)          F_v = DW k_V×1 (F_sq)
//! Y    = PW (F_v)                 X'  = X ⊙ Y
//! P_h  = mean over H of F_h       P_v = mean over W of F_v
//! Z    = ReLU(expand(DW 1×k'_H (P_h)) + expand(DW k'_V×1 (P_v)))
//! out  = X' + Z
//! ```

use super::{check_channels, join, Block, ConvBlockParams, Depthwise, Pointwise};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::Activation;
use crate::params::ParamSpec;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SrfmKernels {
    pub k: usize,
    pub k_h: usize,
    pub k_v: usize,
    pub small_h: usize,
    pub small_v: usize,
}

impl Default for SrfmKernels {
    fn default() -> Self {
        SrfmKernels {
            k: 5,
            k_h: 11,
            k_v: 11,
            small_h: 3,
            small_v: 3,
        }
    }
}

impl SrfmKernels {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k", self.k),
            ("k_h", self.k_h),
            ("k_v", self.k_v),
            ("small_h", self.small_h),
            ("small_v", self.small_v),
        ] {
            if v % 2 == 0 {
                return Err(Error::Config(format!("srfm kernel {name}={v} must be odd")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrfmParams {
    pub prefix: String,
    pub channels: usize,
    pub kernels: SrfmKernels,
}

/// Every intermediate of one SRFM evaluation.
#[derive(Clone, Debug)]
pub struct SrfmTrace<V> {
    pub f_sq: V,
    pub f_h: V,
    pub f_v: V,
    pub y: V,
    pub x_weighted: V,
    pub p_h: V,
    pub p_v: V,
    pub f_h_small: V,
    pub f_v_small: V,
    pub z: V,
    pub out: V,
}

impl SrfmParams {
    pub fn new(prefix: impl Into<String>, channels: usize, kernels: SrfmKernels) -> Result<Self> {
        kernels.validate()?;
        Ok(SrfmParams {
            prefix: prefix.into(),
            channels,
            kernels,
        })
    }

    fn dw(&self, name: &str, kernel: (usize, usize)) -> Depthwise {
        Depthwise::new(join(&self.prefix, name), self.channels, kernel)
    }

    fn parts(
        &self,
    ) -> (
        Depthwise,
        Depthwise,
        Depthwise,
        Pointwise,
        Depthwise,
        Depthwise,
    ) {
        let k = self.kernels;
        (
            self.dw("dw", (k.k, k.k)),
            self.dw("convh", (1, k.k_h)),
            self.dw("convv", (k.k_v, 1)),
            Pointwise {
                prefix: join(&self.prefix, "pw"),
                in_channels: self.channels,
                out_channels: self.channels,
            },
            self.dw("smallh", (1, k.small_h)),
            self.dw("smallv", (k.small_v, 1)),
        )
    }

    pub fn forward_traced<T: Real, G: Graph<T>>(
        &self,
        g: &mut G,
        x: &G::V,
    ) -> Result<SrfmTrace<G::V>> {
        check_channels(g, x, self.channels, "srfm")?;
        let dims = g.dims(x);
        let (h, w) = (dims[2], dims[3]);
        let (dw, convh, convv, pw, smallh, smallv) = self.parts();

        let f_sq = dw.forward(g, x)?;
        let f_h = convh.forward(g, &f_sq)?;
        let f_v = convv.forward(g, &f_sq)?;
        let y = pw.forward(g, &f_v)?;
        let x_weighted = g.hadamard(x, &y)?;

        let p_h = g.avg_pool(&f_h, (h, 1), (1, 1))?;
        let p_v = g.avg_pool(&f_v, (1, w), (1, 1))?;
        let f_h_small = smallh.forward(g, &p_h)?;
        let f_v_small = smallv.forward(g, &p_v)?;
        let eh = g.broadcast_expand(&f_h_small, dims)?;
        let ev = g.broadcast_expand(&f_v_small, dims)?;
        let sum = g.add(&eh, &ev)?;
        let z = g.activation(&sum, Activation::Relu);
        let out = g.add(&x_weighted, &z)?;
        Ok(SrfmTrace {
            f_sq,
            f_h,
            f_v,
            y,
            x_weighted,
            p_h,
            p_v,
            f_h_small,
            f_v_small,
            z,
            out,
        })
    }
}

impl Block for SrfmParams {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let (dw, convh, convv, pw, smallh, smallv) = self.parts();
        let mut v = Vec::new();
        for d in [&dw, &convh, &convv] {
            v.extend(d.specs());
        }
        v.extend(pw.specs());
        for d in [&smallh, &smallv] {
            v.extend(d.specs());
        }
        v
    }

    fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        Ok(self.forward_traced(g, x)?.out)
    }
}

/// `x + post(srfm(gelu(pre(x))))`; pre is a 3×3 conv + affine, post a 1×1
/// conv + affine, neither with an activation of its own.
#[derive(Clone, Debug, PartialEq)]
pub struct SrfmSubBlock {
    pub prefix: String,
    pub channels: usize,
    pub pre: ConvBlockParams,
    pub core: SrfmParams,
    pub post: ConvBlockParams,
}

impl SrfmSubBlock {
    pub fn new(prefix: impl Into<String>, channels: usize, kernels: SrfmKernels) -> Result<Self> {
        let prefix = prefix.into();
        Ok(SrfmSubBlock {
            pre: ConvBlockParams::new(join(&prefix, "pre"), channels, channels, 3).activation(None),
            core: SrfmParams::new(join(&prefix, "srfm"), channels, kernels)?,
            post: ConvBlockParams::new(join(&prefix, "post"), channels, channels, 1)
                .activation(None),
            prefix,
            channels,
        })
    }
}

impl Block for SrfmSubBlock {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.pre.param_specs();
        v.extend(self.core.param_specs());
        v.extend(self.post.param_specs());
        v
    }

    fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        check_channels(g, x, self.channels, "srfm_subblock")?;
        let a = self.pre.forward(g, x)?;
        let a = g.activation(&a, Activation::Gelu);
        let a = self.core.forward(g, &a)?;
        let a = self.post.forward(g, &a)?;
        g.add(x, &a)
    }
}

/// Split 1×1 block into two halves, run the SRFM sub-block chain on the
/// second half, concat with the untouched first half, merge 1×1 block.
#[derive(Clone, Debug, PartialEq)]
pub struct C3k2SrfmParams {
    pub prefix: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub hidden: usize,
    pub split: ConvBlockParams,
    pub blocks: Vec<SrfmSubBlock>,
    pub merge: ConvBlockParams,
}

impl C3k2SrfmParams {
    pub fn new(
        prefix: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        depth: usize,
        kernels: SrfmKernels,
    ) -> Result<Self> {
        let prefix = prefix.into();
        let hidden = (out_channels / 2).max(1);
        let blocks = (0..depth)
            .map(|i| SrfmSubBlock::new(join(&prefix, &format!("m{i}")), hidden, kernels))
            .collect::<Result<Vec<_>>>()?;
        Ok(C3k2SrfmParams {
            split: ConvBlockParams::new(join(&prefix, "split"), in_channels, 2 * hidden, 1),
            merge: ConvBlockParams::new(join(&prefix, "merge"), 2 * hidden, out_channels, 1),
            blocks,
            prefix,
            in_channels,
            out_channels,
            hidden,
        })
    }
}

impl Block for C3k2SrfmParams {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.split.param_specs();
        for b in &self.blocks {
            v.extend(b.param_specs());
        }
        v.extend(self.merge.param_specs());
        v
    }

    fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        check_channels(g, x, self.in_channels, "c3k2_srfm")?;
        let s = self.split.forward(g, x)?;
        let bypass = g.slice_channels(&s, 0, self.hidden)?;
        let mut chain = g.slice_channels(&s, self.hidden, self.hidden)?;
        for b in &self.blocks {
            chain = b.forward(g, &chain)?;
        }
        let cat = g.concat_channels(&[&bypass, &chain])?;
        self.merge.forward(g, &cat)
    }
}
