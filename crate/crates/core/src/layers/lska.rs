//! Large separable kernel attention and the shape perception pooling block.

use super::{check_channels, join, Block, ConvBlockParams, Depthwise, Pointwise};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::ParamSpec;
use crate::tensor::Real;

/// A k×k depthwise kernel approximated by four cascaded 1-D depthwise convs:
/// a local 1×(2d−1) / (2d−1)×1 pair, then a 1×⌈k/d⌉ / ⌈k/d⌉×1 pair with
/// dilation d. A pointwise conv turns the result into an attention map that
/// multiplies the input.
#[derive(Clone, Debug, PartialEq)]
pub struct LskaParams {
    pub prefix: String,
    pub channels: usize,
    /// Largest receptive field the cascade approximates.
    pub k: usize,
    pub d: usize,
}

impl LskaParams {
    pub fn new(prefix: impl Into<String>, channels: usize, k: usize, d: usize) -> Result<Self> {
        if k == 0 || d == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "lska needs positive k, d and channels (got k={k}, d={d}, C={channels})"
            )));
        }
        Ok(LskaParams {
            prefix: prefix.into(),
            channels,
            k,
            d,
        })
    }

    pub fn local_len(&self) -> usize {
        2 * self.d - 1
    }

    pub fn dilated_len(&self) -> usize {
        self.k.div_ceil(self.d)
    }

    /// Extent along one axis covered by the local and dilated pair together.
    pub fn receptive_field(&self) -> usize {
        self.local_len() + self.d * (self.dilated_len() - 1)
    }

    /// Weights of the four 1-D kernels (biases excluded).
    pub fn spatial_param_count(&self) -> usize {
        self.channels * (2 * self.local_len() + 2 * self.dilated_len())
    }

    fn kernels(&self) -> [Depthwise; 4] {
        let (l, m, c, d) = (self.local_len(), self.dilated_len(), self.channels, self.d);
        [
            Depthwise::new(join(&self.prefix, "dwh"), c, (1, l)),
            Depthwise::new(join(&self.prefix, "dwv"), c, (l, 1)),
            Depthwise::new(join(&self.prefix, "dwdh"), c, (1, m)).dilated(1, d),
            Depthwise::new(join(&self.prefix, "dwdv"), c, (m, 1)).dilated(d, 1),
        ]
    }

    fn pointwise(&self) -> Pointwise {
        Pointwise {
            prefix: join(&self.prefix, "pw"),
            in_channels: self.channels,
            out_channels: self.channels,
        }
    }

    /// The attention map alone.
    pub fn attention<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        check_channels(g, x, self.channels, "lska")?;
        let mut a = x.clone();
        for k in self.kernels() {
            a = k.forward(g, &a)?;
        }
        self.pointwise().forward(g, &a)
    }
}

impl Block for LskaParams {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v: Vec<ParamSpec> = self.kernels().iter().flat_map(Depthwise::specs).collect();
        v.extend(self.pointwise().specs());
        v
    }

    fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        let attn = self.attention(g, x)?;
        g.hadamard(x, &attn)
    }
}

/// Window, stride and padding of each SPM pooling stage.
pub const SPM_POOL: (usize, usize, usize) = (5, 1, 2);

/// Entry 1×1 block, three cascaded stride-1 max-pools each followed by its
/// own LSKA, channel concat of all four maps, exit 1×1 block.
#[derive(Clone, Debug, PartialEq)]
pub struct SpmParams {
    pub prefix: String,
    pub channels: usize,
    pub hidden: usize,
    pub entry: ConvBlockParams,
    pub lska: [LskaParams; 3],
    pub exit: ConvBlockParams,
}

impl SpmParams {
    pub fn new(
        prefix: impl Into<String>,
        channels: usize,
        lska_k: usize,
        lska_d: usize,
    ) -> Result<Self> {
        let prefix = prefix.into();
        let hidden = (channels / 2).max(1);
        let lska = [1, 2, 3]
            .map(|i| LskaParams::new(join(&prefix, &format!("lska{i}")), hidden, lska_k, lska_d));
        let [a, b, c] = lska;
        Ok(SpmParams {
            entry: ConvBlockParams::new(join(&prefix, "entry"), channels, hidden, 1),
            exit: ConvBlockParams::new(join(&prefix, "exit"), 4 * hidden, channels, 1),
            lska: [a?, b?, c?],
            prefix,
            channels,
            hidden,
        })
    }

    pub fn pool<T: Real, G: Graph<T>>(g: &mut G, x: &G::V) -> Result<G::V> {
        let (w, s, p) = SPM_POOL;
        g.max_pool(x, (w, w), (s, s), (p, p))
    }
}

impl Block for SpmParams {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = self.entry.param_specs();
        for l in &self.lska {
            v.extend(l.param_specs());
        }
        v.extend(self.exit.param_specs());
        v
    }

    fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, x: &G::V) -> Result<G::V> {
        check_channels(g, x, self.channels, "spm")?;
        let y0 = self.entry.forward(g, x)?;
        let mut stages = vec![y0];
        for l in &self.lska {
            let pooled = Self::pool(g, stages.last().expect("non-empty"))?;
            stages.push(l.forward(g, &pooled)?);
        }
        let refs: Vec<&G::V> = stages.iter().collect();
        let cat = g.concat_channels(&refs)?;
        self.exit.forward(g, &cat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_cascade_is_cheaper_than_full_kernel() {
        let l = LskaParams::new("l", 16, 11, 3).unwrap();
        assert_eq!(l.local_len(), 5);
        assert_eq!(l.dilated_len(), 4);
        assert!(l.receptive_field() >= 11);
        assert_eq!(l.spatial_param_count(), 16 * (2 * 5 + 2 * 4));
        assert!(l.spatial_param_count() < 16 * 11 * 11);
    }

    #[test]
    fn receptive_field_covers_k() {
        for k in 1..40 {
            for d in 1..6 {
                let l = LskaParams::new("l", 1, k, d).unwrap();
                assert!(l.receptive_field() >= k, "k={k} d={d}");
            }
        }
    }

    #[test]
    fn spm_names() {
        let spm = SpmParams::new("spm", 8, 11, 3).unwrap();
        let names: Vec<String> = spm.param_specs().into_iter().map(|s| s.name).collect();
        assert!(names.contains(&"spm.lska1.dwh.weight".to_string()));
        assert!(names.contains(&"spm.lska1.pw.weight".to_string()));
        assert!(names.contains(&"spm.lska3.dwdv.bias".to_string()));
        assert!(names.contains(&"spm.exit.conv.weight".to_string()));
    }

    #[test]
    fn zero_params_rejected() {
        assert!(LskaParams::new("l", 4, 0, 3).is_err());
        assert!(LskaParams::new("l", 4, 7, 0).is_err());
    }
}
