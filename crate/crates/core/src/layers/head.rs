use super::{join, Block, ConvBlockParams, Pointwise};
use crate::error::Result;
use crate::graph::Graph;
use crate::params::ParamSpec;
use crate::tensor::Real;

/// Anchor-free per-cell head: a 3×3 conv block then a 1×1 conv emitting
/// `num_classes` logits followed by four (l, t, r, b) distances in stride units.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectHead {
    pub prefix: String,
    pub in_channels: usize,
    pub num_classes: usize,
    stem: ConvBlockParams,
    out: Pointwise,
}

impl DetectHead {
    pub fn new(prefix: impl Into<String>, in_channels: usize, num_classes: usize) -> Self {
        let prefix = prefix.into();
        DetectHead {
            stem: ConvBlockParams::new(join(&prefix, "stem"), in_channels, in_channels, 3),
            out: Pointwise {
                prefix: join(&prefix, "out"),
                in_channels,
                out_channels: num_classes + 4,
            },
            prefix,
            in_channels,
            num_classes,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.num_classes + 4
    }
}

impl Block for DetectHead {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.stem.param_specs();
        v.extend(self.out.specs());
        v
    }

    fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        let y = self.stem.forward(g, x)?;
        self.out.forward(g, &y)
    }
}
