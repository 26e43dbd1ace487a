//! Parameterized blocks. Each block records only its hyper-parameters and a
//! name prefix; weights are looked up by dot-path name at forward time.

mod dysample;
mod head;
mod lska;
mod srfm;

pub use dysample::DySampleParams;
pub use head::DetectHead;
pub use lska::{LskaParams, SpmParams, SPM_POOL};
pub use srfm::{C3k2SrfmParams, SrfmKernels, SrfmParams, SrfmSubBlock, SrfmTrace};

use crate::error::Result;
use crate::graph::Graph;
use crate::ops::{Activation, ConvSpec, Pad2d};
use crate::params::{Init, ParamSpec};
use crate::tensor::Real;

pub trait Block {
    fn param_specs(&self) -> Vec<ParamSpec>;

    fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V>;

    fn param_count(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Square conv without bias, per-channel affine, optional activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlockParams {
    pub prefix: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Option<Activation>,
}

impl ConvBlockParams {
    pub fn new(
        prefix: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        ConvBlockParams {
            prefix: prefix.into(),
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            activation: Some(Activation::Silu),
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn activation(mut self, act: Option<Activation>) -> Self {
        self.activation = act;
        self
    }

    pub fn weight_name(&self) -> String {
        join(&self.prefix, "conv.weight")
    }

    pub fn scale_name(&self) -> String {
        join(&self.prefix, "affine.scale")
    }

    pub fn shift_name(&self) -> String {
        join(&self.prefix, "affine.shift")
    }
}

impl Block for ConvBlockParams {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let k = self.kernel;
        vec![
            ParamSpec::conv_weight(
                self.weight_name(),
                [self.out_channels, self.in_channels, k, k],
            ),
            ParamSpec::channel(self.scale_name(), self.out_channels, Init::Ones),
            ParamSpec::channel(self.shift_name(), self.out_channels, Init::Zeros),
        ]
    }

    fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        let w = g.param(&self.weight_name())?;
        let spec = ConvSpec::new(self.kernel, self.kernel)
            .with_stride(self.stride, self.stride)
            .with_padding(self.kernel / 2, self.kernel / 2);
        let y = g.conv2d(x, &w, None, &spec)?;
        let scale = g.param(&self.scale_name())?;
        let shift = g.param(&self.shift_name())?;
        let y = g.channel_affine(&y, &scale, &shift)?;
        Ok(match self.activation {
            Some(act) => g.activation(&y, act),
            None => y,
        })
    }
}

/// Channel-preserving depthwise conv with bias and "same" output size.
/// Even dilated spans get the extra padding row/column at the end.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Depthwise {
    pub prefix: String,
    pub channels: usize,
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
}

impl Depthwise {
    pub fn new(prefix: String, channels: usize, kernel: (usize, usize)) -> Self {
        Depthwise {
            prefix,
            channels,
            kernel,
            dilation: (1, 1),
        }
    }

    pub fn dilated(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn weight_name(&self) -> String {
        join(&self.prefix, "weight")
    }

    pub fn bias_name(&self) -> String {
        join(&self.prefix, "bias")
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::conv_weight(
                self.weight_name(),
                [self.channels, 1, self.kernel.0, self.kernel.1],
            ),
            ParamSpec::channel(self.bias_name(), self.channels, Init::Zeros),
        ]
    }

    pub fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        let w = g.param(&self.weight_name())?;
        let b = g.param(&self.bias_name())?;
        let span_h = self.dilation.0 * (self.kernel.0 - 1) + 1;
        let span_w = self.dilation.1 * (self.kernel.1 - 1) + 1;
        let base = ConvSpec::new(self.kernel.0, self.kernel.1)
            .with_dilation(self.dilation.0, self.dilation.1)
            .with_groups(self.channels)
            .with_bias(true);
        if span_h % 2 == 1 && span_w % 2 == 1 {
            let spec = base.with_padding(span_h / 2, span_w / 2);
            g.conv2d(x, &w, Some(&b), &spec)
        } else {
            let padded = g.pad(x, Pad2d::same_for_span(span_h, span_w));
            g.conv2d(&padded, &w, Some(&b), &base)
        }
    }
}

/// 1×1 conv with bias.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Pointwise {
    pub prefix: String,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Pointwise {
    pub fn weight_name(&self) -> String {
        join(&self.prefix, "weight")
    }

    pub fn bias_name(&self) -> String {
        join(&self.prefix, "bias")
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::conv_weight(
                self.weight_name(),
                [self.out_channels, self.in_channels, 1, 1],
            ),
            ParamSpec::channel(self.bias_name(), self.out_channels, Init::Zeros),
        ]
    }

    pub fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        let w = g.param(&self.weight_name())?;
        let b = g.param(&self.bias_name())?;
        g.conv2d(x, &w, Some(&b), &ConvSpec::new(1, 1).with_bias(true))
    }
}

pub(crate) fn check_channels<T: Real, G: Graph<T>>(
    g: &G,
    x: &G::V,
    expected: usize,
    op: &'static str,
) -> Result<()> {
    let c = g.dims(x)[1];
    if c != expected {
        return Err(crate::error::Error::Shape {
            op,
            detail: format!("input has {c} channels, block expects {expected}"),
        });
    }
    Ok(())
}
