//! Gradient-check cases: every primitive, every block, and an end-to-end
//! sample of the assembled model.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::gradcheck::{random_tensor, GradOp};
use crate::graph::Graph;
use crate::layers::{
    Block, C3k2SrfmParams, ConvBlockParams, DetectHead, DySampleParams, LskaParams, SpmParams,
    SrfmKernels, SrfmParams, SrfmSubBlock,
};
use crate::model::{build_model, ModelConfig, ModelGraph};
use crate::ops::{Activation, ConvSpec, Pad2d};
use crate::params::{Init, ParamSpec, ParamStore};
use crate::tensor::{Dims, Tensor};

/// How a primitive's input entry is drawn.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Draw {
    /// Uniform in `[-1, 1)` pushed at least `gap` away from zero.
    Uniform(f64),
    /// A shuffled ladder of values 0.05 apart, so max-pool has no near-ties.
    Distinct,
    /// Sampling coordinates inside `[0, len - 1]` that stay clear of integers.
    Coords(usize, usize),
}

fn draw(rng: &mut ChaCha8Rng, dims: Dims, how: Draw) -> Tensor<f64> {
    match how {
        Draw::Uniform(gap) => random_tensor(rng, dims, -1.0, 1.0, gap),
        Draw::Distinct => {
            let n: usize = dims.iter().product();
            let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
            v.shuffle(rng);
            Tensor::new(dims, v).expect("sized")
        }
        Draw::Coords(h, w) => Tensor::from_fn(dims, |[_, c, _, _]| {
            let len = if c == 0 { h } else { w };
            let cell = rng.random_range(0..len - 1) as f64;
            cell + rng.random_range(0.15..0.85)
        }),
    }
}

type PrimFn = Box<dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>>;

pub(crate) struct Primitive {
    name: String,
    inputs: Vec<(&'static str, Dims, Draw)>,
    f: PrimFn,
}

impl Primitive {
    fn new(
        name: &str,
        inputs: Vec<(&'static str, Dims, Draw)>,
        f: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Primitive {
            name: name.to_string(),
            inputs,
            f: Box::new(f),
        }
    }
}

impl GradOp for Primitive {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
        ParamStore::from_entries(
            self.inputs
                .iter()
                .map(|&(n, dims, how)| (n.to_string(), draw(rng, dims, how)))
                .collect::<Vec<_>>(),
        )
        .expect("unique names")
    }

    fn forward(&self, tape: &mut Tape<'_, f64>) -> Result<Var> {
        let vars = self
            .inputs
            .iter()
            .map(|(n, _, _)| tape.param(n))
            .collect::<Result<Vec<_>>>()?;
        (self.f)(tape, &vars)
    }
}

/// Random values for a block's parameters: weights scaled by fan-in, affine
/// scales near 1, shifts and biases small but nonzero.
pub fn random_params(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    ParamStore::from_entries(
        specs
            .iter()
            .map(|s| {
                let t = match s.init {
                    Init::FanInUniform => {
                        let b = (3.0 / s.fan_in.max(1) as f64).sqrt();
                        random_tensor(rng, s.dims, -b, b, 0.0)
                    }
                    Init::Ones => random_tensor(rng, s.dims, 0.5, 1.5, 0.0),
                    Init::Zeros => random_tensor(rng, s.dims, -0.3, 0.3, 0.0),
                };
                (s.name.clone(), t)
            })
            .collect::<Vec<_>>(),
    )
    .expect("unique parameter names")
}

pub(crate) struct BlockCase<B> {
    name: String,
    block: B,
    input: Dims,
}

impl<B: Block> BlockCase<B> {
    pub(crate) fn new(name: &str, block: B, input: Dims) -> Self {
        BlockCase {
            name: name.to_string(),
            block,
            input,
        }
    }
}

impl<B: Block> GradOp for BlockCase<B> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
        let mut entries: Vec<(String, Tensor<f64>)> = random_params(&self.block.param_specs(), rng)
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        entries.push((
            "input".into(),
            random_tensor(rng, self.input, -1.0, 1.0, 0.0),
        ));
        ParamStore::from_entries(entries).expect("input name is free")
    }

    fn forward(&self, tape: &mut Tape<'_, f64>) -> Result<Var> {
        let x = tape.param("input")?;
        self.block.forward(tape, &x)
    }
}

/// Sum of every head map of a small model.
pub(crate) struct EndToEnd {
    graph: ModelGraph,
}

impl EndToEnd {
    pub(crate) fn new() -> Result<Self> {
        let cfg = ModelConfig {
            num_classes: 2,
            base_width: 4,
            depth: 1,
            input_size: 32,
            ..ModelConfig::default()
        };
        Ok(EndToEnd {
            graph: build_model(&cfg)?,
        })
    }
}

impl GradOp for EndToEnd {
    fn name(&self) -> String {
        "model end-to-end".into()
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
        let s = self.graph.config().input_size;
        let mut entries: Vec<(String, Tensor<f64>)> = random_params(&self.graph.param_specs(), rng)
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        entries.push((
            "image".into(),
            random_tensor(rng, [1, 3, s, s], -1.0, 1.0, 0.0),
        ));
        ParamStore::from_entries(entries).expect("image name is free")
    }

    fn forward(&self, tape: &mut Tape<'_, f64>) -> Result<Var> {
        let image = tape.param("image")?;
        let heads = self.graph.forward(tape, &image)?;
        let mut total = tape.sum(&heads[0]);
        for h in &heads[1..] {
            let s = tape.sum(h);
            total = tape.add(&total, &s)?;
        }
        Ok(total)
    }
}

pub(crate) fn primitives() -> Vec<Primitive> {
    use Draw::*;
    let u = Uniform(0.0);
    let conv = |name: &str, x: Dims, w: Dims, spec: ConvSpec| {
        let bias = spec.has_bias;
        let mut inputs = vec![("x", x, u), ("w", w, u)];
        if bias {
            inputs.push(("b", [1, w[0], 1, 1], u));
        }
        Primitive::new(name, inputs, move |t, v| {
            t.conv2d(&v[0], &v[1], v.get(2), &spec)
        })
    };
    let mut cases = vec![
        conv(
            "conv 3x3 + bias",
            [2, 3, 6, 5],
            [4, 3, 3, 3],
            ConvSpec::same(3, 3).with_bias(true),
        ),
        conv(
            "conv stride 2",
            [1, 2, 7, 6],
            [3, 2, 3, 3],
            ConvSpec::same(3, 3).with_stride(2, 2),
        ),
        conv(
            "conv dilated",
            [1, 2, 7, 7],
            [2, 2, 3, 3],
            ConvSpec::new(3, 3).with_dilation(2, 2).with_padding(2, 2),
        ),
        conv(
            "conv grouped",
            [1, 4, 5, 5],
            [6, 2, 3, 3],
            ConvSpec::same(3, 3).with_groups(2).with_bias(true),
        ),
        conv(
            "conv depthwise 5x5",
            [1, 3, 6, 7],
            [3, 1, 5, 5],
            ConvSpec::same(5, 5).with_groups(3).with_bias(true),
        ),
        conv(
            "conv pointwise",
            [2, 3, 4, 4],
            [5, 3, 1, 1],
            ConvSpec::new(1, 1).with_bias(true),
        ),
        conv(
            "conv strip 1x7",
            [1, 2, 4, 9],
            [2, 1, 1, 7],
            ConvSpec::same(1, 7).with_groups(2).with_bias(true),
        ),
        conv(
            "conv strip 7x1",
            [1, 2, 9, 4],
            [2, 1, 7, 1],
            ConvSpec::same(7, 1).with_groups(2).with_bias(true),
        ),
        Primitive::new("pad", vec![("x", [1, 2, 3, 4], u)], |t, v| {
            Ok(t.pad(
                &v[0],
                Pad2d {
                    top: 1,
                    bottom: 2,
                    left: 0,
                    right: 3,
                },
            ))
        }),
        Primitive::new("avg_pool 2x2", vec![("x", [1, 2, 6, 6], u)], |t, v| {
            t.avg_pool(&v[0], (2, 2), (2, 2))
        }),
        Primitive::new("avg_pool strip", vec![("x", [1, 2, 5, 6], u)], |t, v| {
            t.avg_pool(&v[0], (5, 1), (1, 1))
        }),
        Primitive::new(
            "max_pool 5/1/2",
            vec![("x", [1, 2, 6, 6], Distinct)],
            |t, v| t.max_pool(&v[0], (5, 5), (1, 1), (2, 2)),
        ),
        Primitive::new(
            "max_pool 2/2/0",
            vec![("x", [1, 2, 6, 6], Distinct)],
            |t, v| t.max_pool(&v[0], (2, 2), (2, 2), (0, 0)),
        ),
    ];
    for (name, act) in [
        ("relu", Activation::Relu),
        ("gelu", Activation::Gelu),
        ("silu", Activation::Silu),
        ("sigmoid", Activation::Sigmoid),
    ] {
        cases.push(Primitive::new(
            name,
            vec![("x", [1, 3, 4, 4], Uniform(0.05))],
            move |t, v| Ok(t.activation(&v[0], act)),
        ));
    }
    cases.extend([
        Primitive::new(
            "hadamard",
            vec![("x", [1, 2, 3, 4], u), ("y", [1, 2, 3, 4], u)],
            |t, v| t.hadamard(&v[0], &v[1]),
        ),
        Primitive::new(
            "add",
            vec![("x", [1, 2, 3, 4], u), ("y", [1, 2, 3, 4], u)],
            |t, v| t.add(&v[0], &v[1]),
        ),
        Primitive::new("scale", vec![("x", [1, 2, 3, 4], u)], |t, v| {
            Ok(t.scale(&v[0], -1.75))
        }),
        Primitive::new(
            "channel_affine",
            vec![
                ("x", [2, 3, 3, 4], u),
                ("s", [1, 3, 1, 1], u),
                ("b", [1, 3, 1, 1], u),
            ],
            |t, v| t.channel_affine(&v[0], &v[1], &v[2]),
        ),
        Primitive::new(
            "concat + slice",
            vec![("x", [1, 2, 3, 3], u), ("y", [1, 3, 3, 3], u)],
            |t, v| {
                let c = t.concat_channels(&[&v[0], &v[1]])?;
                t.slice_channels(&c, 1, 3)
            },
        ),
        Primitive::new("broadcast rows", vec![("x", [1, 2, 1, 4], u)], |t, v| {
            t.broadcast_expand(&v[0], [1, 2, 3, 4])
        }),
        Primitive::new("broadcast cols", vec![("x", [1, 2, 3, 1], u)], |t, v| {
            t.broadcast_expand(&v[0], [1, 2, 3, 4])
        }),
        Primitive::new("upsample_nearest", vec![("x", [1, 2, 3, 3], u)], |t, v| {
            t.upsample_nearest(&v[0], 2)
        }),
        Primitive::new(
            "grid_sample_bilinear",
            vec![
                ("x", [1, 2, 4, 5], u),
                ("coords", [1, 2, 3, 6], Coords(4, 5)),
            ],
            |t, v| t.grid_sample_bilinear(&v[0], &v[1]),
        ),
        Primitive::new("pixel_shuffle", vec![("x", [1, 8, 2, 3], u)], |t, v| {
            t.pixel_shuffle(&v[0], 2)
        }),
    ]);
    cases
}

pub(crate) fn blocks() -> Result<Vec<Box<dyn GradOp>>> {
    let k = SrfmKernels::default();
    let small = SrfmKernels {
        k: 3,
        k_h: 5,
        k_v: 5,
        small_h: 3,
        small_v: 3,
    };
    Ok(vec![
        Box::new(BlockCase::new(
            "conv block",
            ConvBlockParams::new("cb", 3, 4, 3).stride(2),
            [1, 3, 7, 7],
        )),
        Box::new(BlockCase::new(
            "lska k11 d3",
            LskaParams::new("lska", 3, 11, 3)?,
            [1, 3, 9, 10],
        )),
        Box::new(BlockCase::new(
            "lska k7 d2",
            LskaParams::new("lska", 2, 7, 2)?,
            [1, 2, 6, 6],
        )),
        Box::new(BlockCase::new(
            "spm",
            SpmParams::new("spm", 4, 5, 2)?,
            [1, 4, 6, 6],
        )),
        Box::new(BlockCase::new(
            "srfm",
            SrfmParams::new("srfm", 3, k)?,
            [1, 3, 7, 8],
        )),
        Box::new(BlockCase::new(
            "srfm sub-block",
            SrfmSubBlock::new("sub", 2, small)?,
            [1, 2, 6, 5],
        )),
        Box::new(BlockCase::new(
            "c3k2-srfm",
            C3k2SrfmParams::new("c3k2", 3, 4, 2, small)?,
            [1, 3, 5, 6],
        )),
        Box::new(BlockCase::new(
            "dysample",
            DySampleParams::new("up", 3, 2)?,
            [1, 3, 4, 5],
        )),
        Box::new(BlockCase::new(
            "detect head",
            DetectHead::new("head", 3, 2),
            [1, 3, 4, 4],
        )),
    ])
}
