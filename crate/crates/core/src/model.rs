//! The assembled detector: backbone emitting P2–P5 with SPM at the tail, a
//! top-down pathway with learned upsampling and the high-resolution P2 branch,
//! a bottom-up pathway, and one head per pyramid level.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Eval, Graph};
use crate::layers::{
    Block, C3k2SrfmParams, ConvBlockParams, DetectHead, DySampleParams, SpmParams, SrfmKernels,
};
use crate::params::{init_params, ParamSpec, ParamStore};
use crate::tensor::{Real, Tensor};

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub k: usize,
    pub kh: usize,
    pub kv: usize,
    pub ksmall: usize,
    pub lska_k: usize,
    pub lska_d: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            k: 5,
            kh: 11,
            kv: 11,
            ksmall: 3,
            lska_k: 11,
            lska_d: 3,
        }
    }
}

impl KernelConfig {
    pub fn srfm(&self) -> SrfmKernels {
        SrfmKernels {
            k: self.k,
            k_h: self.kh,
            k_v: self.kv,
            small_h: self.ksmall,
            small_v: self.ksmall,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Channel width at stride 4; deeper levels use 2×, 4×, 8×.
    pub base_width: usize,
    /// SRFM sub-blocks per C3k2 block.
    pub depth: usize,
    #[serde(default)]
    pub kernels: KernelConfig,
    pub input_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub use_p2: bool,
    #[serde(default = "yes")]
    pub use_dysample: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 4,
            base_width: 8,
            depth: 1,
            kernels: KernelConfig::default(),
            input_size: 64,
            seed: 0,
            use_p2: true,
            use_dysample: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            problems.push(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            ));
        }
        if self.base_width < 4 {
            problems.push(format!("base_width {} must be at least 4", self.base_width));
        }
        if self.num_classes == 0 {
            problems.push("num_classes must be positive".to_string());
        }
        let k = &self.kernels;
        for (name, v) in [
            ("k", k.k),
            ("kh", k.kh),
            ("kv", k.kv),
            ("ksmall", k.ksmall),
            ("lska_k", k.lska_k),
        ] {
            if v % 2 == 0 {
                problems.push(format!("kernels.{name} = {v} must be odd"));
            }
        }
        if k.lska_d == 0 {
            problems.push("kernels.lska_d must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeOp {
    Input,
    ConvBlock(ConvBlockParams),
    C3k2(C3k2SrfmParams),
    Spm(SpmParams),
    DySample(DySampleParams),
    Nearest { factor: usize },
    Concat,
    Head(DetectHead),
}

impl NodeOp {
    pub fn kind(&self) -> &'static str {
        match self {
            NodeOp::Input => "input",
            NodeOp::ConvBlock(_) => "conv",
            NodeOp::C3k2(_) => "c3k2_srfm",
            NodeOp::Spm(_) => "spm",
            NodeOp::DySample(_) => "dysample",
            NodeOp::Nearest { .. } => "nearest",
            NodeOp::Concat => "concat",
            NodeOp::Head(_) => "head",
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            NodeOp::ConvBlock(b) => b.param_specs(),
            NodeOp::C3k2(b) => b.param_specs(),
            NodeOp::Spm(b) => b.param_specs(),
            NodeOp::DySample(b) => b.param_specs(),
            NodeOp::Head(b) => b.param_specs(),
            NodeOp::Input | NodeOp::Nearest { .. } | NodeOp::Concat => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: NodeOp,
    pub inputs: Vec<usize>,
    pub channels: usize,
    /// Downsampling factor of this node's output relative to the image.
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    pub level: String,
    pub node: usize,
    pub stride: usize,
    pub channels: usize,
}

/// Immutable network description. Nodes are stored in evaluation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    config: ModelConfig,
    nodes: Vec<Node>,
    heads: Vec<HeadOutput>,
}

struct Builder {
    nodes: Vec<Node>,
}

impl Builder {
    fn push(
        &mut self,
        name: &str,
        op: NodeOp,
        inputs: &[usize],
        channels: usize,
        stride: usize,
    ) -> usize {
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs: inputs.to_vec(),
            channels,
            stride,
        });
        self.nodes.len() - 1
    }

    fn conv(&mut self, name: &str, input: usize, out: usize, k: usize, stride: usize) -> usize {
        let src = &self.nodes[input];
        let (cin, s) = (src.channels, src.stride);
        let block = ConvBlockParams::new(name, cin, out, k).stride(stride);
        self.push(name, NodeOp::ConvBlock(block), &[input], out, s * stride)
    }

    fn c3k2(&mut self, name: &str, input: usize, out: usize, cfg: &ModelConfig) -> Result<usize> {
        let src = &self.nodes[input];
        let (cin, s) = (src.channels, src.stride);
        let block = C3k2SrfmParams::new(name, cin, out, cfg.depth, cfg.kernels.srfm())?;
        Ok(self.push(name, NodeOp::C3k2(block), &[input], out, s))
    }

    fn upsample(&mut self, name: &str, input: usize, cfg: &ModelConfig) -> Result<usize> {
        let src = &self.nodes[input];
        let (c, s) = (src.channels, src.stride);
        let op = if cfg.use_dysample {
            NodeOp::DySample(DySampleParams::new(name, c, 2)?)
        } else {
            NodeOp::Nearest { factor: 2 }
        };
        Ok(self.push(name, op, &[input], c, s / 2))
    }

    fn concat(&mut self, name: &str, a: usize, b: usize) -> usize {
        let c = self.nodes[a].channels + self.nodes[b].channels;
        let s = self.nodes[a].stride;
        debug_assert_eq!(s, self.nodes[b].stride);
        self.push(name, NodeOp::Concat, &[a, b], c, s)
    }
}

pub fn build_model(cfg: &ModelConfig) -> Result<ModelGraph> {
    cfg.validate()?;
    let w = cfg.base_width;
    let mut b = Builder { nodes: Vec::new() };

    let input = b.push("input", NodeOp::Input, &[], 3, 1);
    let stem = b.conv("backbone.stem", input, (w / 2).max(1), 3, 2);
    let mut prev = stem;
    let mut levels = Vec::new();
    for (i, mult) in [1usize, 2, 4, 8].into_iter().enumerate() {
        let tag = format!("backbone.p{}", i + 2);
        let down = b.conv(&format!("{tag}.down"), prev, w * mult, 3, 2);
        prev = b.c3k2(&format!("{tag}.c3k2"), down, w * mult, cfg)?;
        levels.push(prev);
    }
    let (p2, p3, p4) = (levels[0], levels[1], levels[2]);
    let spm = SpmParams::new(
        "backbone.spm",
        8 * w,
        cfg.kernels.lska_k,
        cfg.kernels.lska_d,
    )?;
    let f5 = b.push("backbone.spm", NodeOp::Spm(spm), &[levels[3]], 8 * w, 32);

    // top-down
    let up5 = b.upsample("neck.up5", f5, cfg)?;
    let cat4 = b.concat("neck.cat4", up5, p4);
    let f4 = b.c3k2("neck.f4", cat4, 4 * w, cfg)?;
    let up4 = b.upsample("neck.up4", f4, cfg)?;
    let cat3 = b.concat("neck.cat3", up4, p3);
    let f3 = b.c3k2("neck.f3", cat3, 2 * w, cfg)?;

    let mut outputs = Vec::new();
    let t3 = if cfg.use_p2 {
        let up3 = b.upsample("neck.up3", f3, cfg)?;
        let cat2 = b.concat("neck.cat2", up3, p2);
        let f2 = b.c3k2("neck.f2", cat2, w, cfg)?;
        outputs.push(("T2", f2));
        // bottom-up from the P2 branch
        let down2 = b.conv("neck.down2", f2, w, 3, 2);
        let cat = b.concat("neck.pan3", down2, f3);
        b.c3k2("neck.t3", cat, 2 * w, cfg)?
    } else {
        f3
    };
    outputs.push(("T3", t3));
    let down3 = b.conv("neck.down3", t3, 2 * w, 3, 2);
    let cat = b.concat("neck.pan4", down3, f4);
    let t4 = b.c3k2("neck.t4", cat, 4 * w, cfg)?;
    outputs.push(("T4", t4));
    let down4 = b.conv("neck.down4", t4, 4 * w, 3, 2);
    let cat = b.concat("neck.pan5", down4, f5);
    let t5 = b.c3k2("neck.t5", cat, 8 * w, cfg)?;
    outputs.push(("T5", t5));

    let mut heads = Vec::new();
    for (level, node) in outputs {
        let src = &b.nodes[node];
        let (c, s) = (src.channels, src.stride);
        let name = format!("head.{}", level.to_lowercase());
        let head = DetectHead::new(&name, c, cfg.num_classes);
        let out = head.out_channels();
        let id = b.push(&name, NodeOp::Head(head), &[node], out, s);
        heads.push(HeadOutput {
            level: level.to_string(),
            node: id,
            stride: s,
            channels: out,
        });
    }

    Ok(ModelGraph {
        config: cfg.clone(),
        nodes: b.nodes,
        heads,
    })
}

impl ModelGraph {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn heads(&self) -> &[HeadOutput] {
        &self.heads
    }

    pub fn head_strides(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.stride).collect()
    }

    /// Every node's inputs precede it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.inputs.iter().all(|&j| j < i))
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.nodes.iter().flat_map(|n| n.op.param_specs()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore<f32>> {
        let specs = self.param_specs();
        let unique: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        debug_assert_eq!(unique.len(), specs.len(), "duplicate parameter names");
        init_params(&specs, seed)
    }

    pub fn check_weights<T: Real>(&self, store: &ParamStore<T>) -> Result<()> {
        store.check_against(&self.param_specs())
    }

    /// Raw head maps, one per entry of [`ModelGraph::heads`], each with
    /// `num_classes + 4` channels.
    pub fn forward<T: Real, G: Graph<T>>(&self, g: &mut G, image: &G::V) -> Result<Vec<G::V>> {
        let [_, c, h, w] = g.dims(image);
        let s = self.config.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::shape(
                "forward",
                format!("input is {c}x{h}x{w}, model expects 3x{s}x{s}"),
            ));
        }
        let mut values: Vec<Option<G::V>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let arg = |k: usize| {
                values[node.inputs[k]]
                    .clone()
                    .expect("inputs evaluated first")
            };
            let v = match &node.op {
                NodeOp::Input => image.clone(),
                NodeOp::ConvBlock(b) => b.forward(g, &arg(0))?,
                NodeOp::C3k2(b) => b.forward(g, &arg(0))?,
                NodeOp::Spm(b) => b.forward(g, &arg(0))?,
                NodeOp::DySample(b) => b.forward(g, &arg(0))?,
                NodeOp::Head(b) => b.forward(g, &arg(0))?,
                NodeOp::Nearest { factor } => g.upsample_nearest(&arg(0), *factor)?,
                NodeOp::Concat => {
                    let (a, b) = (arg(0), arg(1));
                    g.concat_channels(&[&a, &b])?
                }
            };
            values[i] = Some(v);
        }
        Ok(self
            .heads
            .iter()
            .map(|h| values[h.node].clone().expect("head evaluated"))
            .collect())
    }

    pub fn run<T: Real>(
        &self,
        params: &ParamStore<T>,
        image: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let mut g = Eval::new(params);
        self.forward(&mut g, image)
    }
}

impl fmt::Display for ModelGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(
                f,
                "{i:>3} {:<10} {:<22} in={:?} C={} stride={}",
                n.op.kind(),
                n.name,
                n.inputs,
                n.channels,
                n.stride
            )?;
        }
        Ok(())
    }
}
