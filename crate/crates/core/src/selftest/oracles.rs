//! Equivalence checks of the optimized code against [`crate::reference`].

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cases::random_params;
use crate::detect::{average_precision, iou_thresholds, precision_recall_f1, Interp};
use crate::error::Result;
use crate::gradcheck::random_tensor;
use crate::graph::{Eval, Graph};
use crate::layers::{Block, DySampleParams, LskaParams, SpmParams, SrfmKernels, SrfmParams};
use crate::ops::{self, ConvSpec};
use crate::params::ParamStore;
use crate::reference::{self, Geometry};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tol: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {:<36} cases={:<4} worst {:.6e} (tol {:.0e})",
            self.name, self.cases, self.worst, self.tol
        )
    }
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0xA076_1D64_78BD_642F))
}

fn check(name: &str, cases: usize, worst: f64, tol: f64) -> OracleCheck {
    OracleCheck {
        name: name.to_string(),
        cases,
        worst,
        tol,
    }
}

/// One random convolution configuration, biased toward the shapes the model
/// uses (depthwise, pointwise, strips, dilation).
pub fn random_conv_case(
    rng: &mut ChaCha8Rng,
) -> (Tensor<f64>, Tensor<f64>, Option<Tensor<f64>>, ConvSpec) {
    let kind = rng.random_range(0..5);
    let (kh, kw) = match kind {
        0 => (1, 1),
        1 => (1, 2 * rng.random_range(1..6) + 1),
        2 => (2 * rng.random_range(1..6) + 1, 1),
        _ => (rng.random_range(1..6), rng.random_range(1..6)),
    };
    let groups = rng.random_range(1..4);
    let cg = rng.random_range(1..4);
    let depthwise = rng.random_bool(0.3);
    let (cin, cout) = if depthwise {
        (groups, groups)
    } else {
        (groups * cg, groups * rng.random_range(1..4))
    };
    let cg = cin / groups;
    let stride = (rng.random_range(1..4), rng.random_range(1..4));
    let dilation = (rng.random_range(1..4), rng.random_range(1..4));
    let padding = (rng.random_range(0..kh + 1), rng.random_range(0..kw + 1));
    let span = (dilation.0 * (kh - 1) + 1, dilation.1 * (kw - 1) + 1);
    let h = (span.0 + rng.random_range(0..8usize))
        .saturating_sub(2 * padding.0)
        .max(1);
    let w = (span.1 + rng.random_range(0..8usize))
        .saturating_sub(2 * padding.1)
        .max(1);
    let n = rng.random_range(1..3);
    let has_bias = rng.random_bool(0.5);
    let spec = ConvSpec::new(kh, kw)
        .with_stride(stride.0, stride.1)
        .with_padding(padding.0, padding.1)
        .with_dilation(dilation.0, dilation.1)
        .with_groups(groups)
        .with_bias(has_bias);
    let x = random_tensor(rng, [n, cin, h, w], -1.0, 1.0, 0.0);
    let wt = random_tensor(rng, [cout, cg, kh, kw], -1.0, 1.0, 0.0);
    let b = has_bias.then(|| random_tensor(rng, [1, cout, 1, 1], -1.0, 1.0, 0.0));
    (x, wt, b, spec)
}

pub fn conv_oracle(cases: usize, seed: u64) -> Result<OracleCheck> {
    let mut r = rng(seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (x, w, b, spec) = random_conv_case(&mut r);
        let fast = ops::conv2d(&x, &w, b.as_ref(), &spec)?;
        let geo = Geometry {
            stride: spec.stride,
            pad: [
                spec.padding.0,
                spec.padding.0,
                spec.padding.1,
                spec.padding.1,
            ],
            dilation: spec.dilation,
            groups: spec.groups,
        };
        let slow = reference::conv2d(&x, &w, b.as_ref(), geo);
        worst = worst.max(fast.max_rel_diff(&slow));
    }
    Ok(check("conv2d vs direct loops", cases, worst, 1e-6))
}

/// 1×k then k×1 depthwise equals the outer-product k×k kernel.
pub fn separability(seed: u64) -> Result<OracleCheck> {
    let mut r = rng(seed, 2);
    let mut worst: f64 = 0.0;
    let ks = [3, 7, 11];
    for k in ks {
        let c = 3;
        let x = random_tensor(&mut r, [1, c, 13, 12], -1.0, 1.0, 0.0);
        let wh = random_tensor(&mut r, [c, 1, 1, k], -1.0, 1.0, 0.0);
        let wv = random_tensor(&mut r, [c, 1, k, 1], -1.0, 1.0, 0.0);
        let a = ops::conv2d(&x, &wh, None, &ConvSpec::same(1, k).with_groups(c))?;
        let cascade = ops::conv2d(&a, &wv, None, &ConvSpec::same(k, 1).with_groups(c))?;
        let outer = Tensor::from_fn([c, 1, k, k], |[ch, _, i, j]| {
            wv.at([ch, 0, i, 0]) * wh.at([ch, 0, 0, j])
        });
        let full = ops::conv2d(&x, &outer, None, &ConvSpec::same(k, k).with_groups(c))?;
        worst = worst.max(cascade.max_rel_diff(&full));
    }
    Ok(check(
        "strip cascade vs outer-product kernel",
        ks.len(),
        worst,
        1e-6,
    ))
}

/// The SRFM layer against the step-by-step transcription, including the
/// pooled strip shapes.
pub fn srfm_transcription(draws: usize, seed: u64) -> Result<OracleCheck> {
    let mut r = rng(seed, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let odd = |r: &mut ChaCha8Rng, hi: usize| 2 * r.random_range(0..hi) + 1;
        let kernels = SrfmKernels {
            k: odd(&mut r, 3),
            k_h: odd(&mut r, 6),
            k_v: odd(&mut r, 6),
            small_h: odd(&mut r, 3),
            small_v: odd(&mut r, 3),
        };
        let c = r.random_range(1..5);
        let dims = [
            r.random_range(1..3),
            c,
            r.random_range(1..10),
            r.random_range(1..10),
        ];
        let block = SrfmParams::new("s", c, kernels)?;
        let store = random_params(&block.param_specs(), &mut r);
        let x = random_tensor(&mut r, dims, -1.0, 1.0, 0.0);
        let mut g = Eval::new(&store);
        let trace = block.forward_traced(&mut g, &x)?;
        let steps = reference::srfm(&x, &store, "s", kernels);
        let [n, _, h, w] = dims;
        if trace.p_h.dims() != [n, c, 1, w] || trace.p_v.dims() != [n, c, h, 1] {
            return Ok(check("srfm vs transcription", draws, f64::INFINITY, 1e-6));
        }
        for (a, b) in [
            (&trace.f_sq, &steps.f_sq),
            (&trace.f_h, &steps.f_h),
            (&trace.f_v, &steps.f_v),
            (&trace.y, &steps.y),
            (&trace.x_weighted, &steps.x_weighted),
            (&trace.p_h, &steps.p_h),
            (&trace.p_v, &steps.p_v),
            (&trace.z, &steps.z),
            (&trace.out, &steps.out),
        ] {
            worst = worst.max(a.max_rel_diff(b));
        }
    }
    Ok(check("srfm vs transcription", draws, worst, 1e-6))
}

pub fn lska_oracle(draws: usize, seed: u64) -> Result<OracleCheck> {
    let mut r = rng(seed, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let c = r.random_range(1..4);
        let k = r.random_range(3..14);
        let d = r.random_range(1..5);
        let block = LskaParams::new("l", c, k, d)?;
        let store = random_params(&block.param_specs(), &mut r);
        let dims = [1, c, r.random_range(2..12), r.random_range(2..12)];
        let x = random_tensor(&mut r, dims, -1.0, 1.0, 0.0);
        let fast = block.forward(&mut Eval::new(&store), &x)?;
        worst = worst.max(fast.max_rel_diff(&reference::lska(&x, &store, "l", d)));
    }
    Ok(check("lska vs direct cascade", draws, worst, 1e-6))
}

/// Pointwise weights 0 and bias 1: the attention map is exactly one.
pub fn with_unit_attention(store: &ParamStore<f64>, pw_prefix: &str) -> Result<ParamStore<f64>> {
    let w = store.require(&format!("{pw_prefix}.weight"))?;
    let b = store.require(&format!("{pw_prefix}.bias"))?;
    store
        .with_replaced(&format!("{pw_prefix}.weight"), Tensor::zeros(w.dims()))?
        .with_replaced(&format!("{pw_prefix}.bias"), Tensor::ones(b.dims()))
}

fn exact(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    if a == b {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn identities(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut r = rng(seed, 5);
    let mut out = Vec::new();
    let x = random_tensor(&mut r, [1, 4, 8, 9], -1.0, 1.0, 0.0);

    // SRFM with Y ≡ 1 and Z ≡ 0
    let srfm = SrfmParams::new("s", 4, SrfmKernels::default())?;
    let mut store = with_unit_attention(&random_params(&srfm.param_specs(), &mut r), "s.pw")?;
    for part in ["smallh", "smallv"] {
        for leaf in ["weight", "bias"] {
            let name = format!("s.{part}.{leaf}");
            let dims = store.require(&name)?.dims();
            store = store.with_replaced(&name, Tensor::zeros(dims))?;
        }
    }
    let y = srfm.forward(&mut Eval::new(&store), &x)?;
    out.push(check("srfm (Y=1, Z=0) is identity", 1, exact(&y, &x), 0.0));

    // LSKA with impulse kernels and unit attention
    let lska = LskaParams::new("l", 4, 11, 3)?;
    let mut store = with_unit_attention(&random_params(&lska.param_specs(), &mut r), "l.pw")?;
    for part in ["dwh", "dwv", "dwdh", "dwdv"] {
        let name = format!("l.{part}.weight");
        let [c, _, kh, kw] = store.require(&name)?.dims();
        let impulse = Tensor::from_fn([c, 1, kh, kw], |[_, _, i, j]| {
            if i == kh / 2 && j == kw / 2 {
                1.0
            } else {
                0.0
            }
        });
        store = store.with_replaced(&name, impulse)?;
    }
    let y = lska.forward(&mut Eval::new(&store), &x)?;
    out.push(check(
        "lska (impulse, unit attention) is identity",
        1,
        exact(&y, &x),
        0.0,
    ));

    // DySample with zero offsets
    let mut worst: f64 = 0.0;
    for s in [1, 2, 3] {
        let up = DySampleParams::new("u", 4, s)?;
        let zero = ParamStore::from_entries(
            up.param_specs()
                .into_iter()
                .map(|p| (p.name, Tensor::zeros(p.dims))),
        )?;
        let y = up.forward(&mut Eval::new(&zero), &x)?;
        worst = worst.max(y.max_rel_diff(&reference::bilinear_upsample(&x, s)));
    }
    out.push(check("dysample (zero offsets) is bilinear", 3, worst, 1e-6));

    // SPM with unit attention against plain pool aggregation
    let spm = SpmParams::new("spm", 4, 11, 3)?;
    let mut store = random_params(&spm.param_specs(), &mut r);
    for i in 1..=3 {
        store = with_unit_attention(&store, &format!("spm.lska{i}.pw"))?;
    }
    let mut g = Eval::new(&store);
    let y = spm.forward(&mut g, &x)?;
    let y0 = spm.entry.forward(&mut g, &x)?;
    let y1 = SpmParams::pool(&mut g, &y0)?;
    let y2 = SpmParams::pool(&mut g, &y1)?;
    let y3 = SpmParams::pool(&mut g, &y2)?;
    let cat = g.concat_channels(&[&y0, &y1, &y2, &y3])?;
    let plain = spm.exit.forward(&mut g, &cat)?;
    out.push(check(
        "spm (unit attention) is pool aggregation",
        1,
        exact(&y, &plain),
        0.0,
    ));
    Ok(out)
}

pub fn metrics(seed: u64) -> Vec<OracleCheck> {
    let mut out = Vec::new();
    let labeled = [(0.9, true), (0.8, false), (0.7, true)];
    let ap = average_precision(&labeled, 2, Interp::Point101);
    out.push(check(
        "3-detection AP",
        1,
        (ap - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs(),
        1e-12,
    ));

    let mut r = rng(seed, 6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let gt = r.random_range(1..20);
        let n = r.random_range(0..30);
        let mut tp_left = gt;
        let labeled: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let tp = tp_left > 0 && r.random_bool(0.6);
                if tp {
                    tp_left -= 1;
                }
                (r.random_range(0.0..1.0), tp)
            })
            .collect();
        let a = average_precision(&labeled, gt, Interp::Point101);
        let e = average_precision(&labeled, gt, Interp::Exact);
        worst = worst.max((a - e).abs());
    }
    out.push(check("101-point vs exact AP", 100, worst, 0.02));
    out.push(check(
        "iou threshold count",
        1,
        (iou_thresholds().len() as f64 - 10.0).abs(),
        0.0,
    ));
    let degenerate = [(0, 0, 0), (0, 5, 0), (0, 0, 5)]
        .iter()
        .map(|&(a, b, c)| {
            let (p, r, f) = precision_recall_f1(a, b, c);
            if p.is_nan() || r.is_nan() || f != 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    out.push(check("degenerate F1 is zero", 3, degenerate, 0.0));
    out
}
