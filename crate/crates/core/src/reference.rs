//! Deliberately naive 64-bit implementations used as test oracles.
//!
//! Nothing here calls into [`crate::ops`]; every function is a direct loop
//! over the defining formula so that it can be compared against the
//! optimized kernels and the layer code.

use crate::layers::SrfmKernels;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Convolution geometry with explicit per-side padding `[top, bottom, left, right]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub stride: (usize, usize),
    pub pad: [usize; 4],
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            stride: (1, 1),
            pad: [0; 4],
            dilation: (1, 1),
            groups: 1,
        }
    }
}

impl Geometry {
    /// Output keeps the input size; an even span puts the extra row/column at the end.
    pub fn same(kernel: (usize, usize), dilation: (usize, usize), groups: usize) -> Self {
        let th = dilation.0 * (kernel.0 - 1);
        let tw = dilation.1 * (kernel.1 - 1);
        Geometry {
            stride: (1, 1),
            pad: [th / 2, th - th / 2, tw / 2, tw - tw / 2],
            dilation,
            groups,
        }
    }
}

pub fn conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    g: Geometry,
) -> Tensor<f64> {
    let [n, cin, h, wd] = x.dims();
    let [cout, cg, kh, kw] = w.dims();
    assert_eq!(cin, cg * g.groups, "reference conv: channel mismatch");
    let [pt, pb, pl, pr] = g.pad;
    let ho = (h + pt + pb - g.dilation.0 * (kh - 1) - 1) / g.stride.0 + 1;
    let wo = (wd + pl + pr - g.dilation.1 * (kw - 1) - 1) / g.stride.1 + 1;
    let per_group = cout / g.groups;
    Tensor::from_fn([n, cout, ho, wo], |[b, oc, oy, ox]| {
        let grp = oc / per_group;
        let mut acc = bias.map_or(0.0, |t| t.data()[oc]);
        for ic in 0..cg {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * g.stride.0 + ky * g.dilation.0) as isize - pt as isize;
                    let ix = (ox * g.stride.1 + kx * g.dilation.1) as isize - pl as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                        continue;
                    }
                    acc +=
                        x.at([b, grp * cg + ic, iy as usize, ix as usize]) * w.at([oc, ic, ky, kx]);
                }
            }
        }
        acc
    })
}

fn depthwise_same(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    dilation: (usize, usize),
) -> Tensor<f64> {
    let [_, _, kh, kw] = w.dims();
    conv2d(
        x,
        w,
        Some(b),
        Geometry::same((kh, kw), dilation, x.channels()),
    )
}

fn pointwise(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    conv2d(x, w, Some(b), Geometry::default())
}

pub fn max_pool(x: &Tensor<f64>, k: usize, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.dims();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    Tensor::from_fn([n, c, ho, wo], |[b, ch, oy, ox]| {
        let mut m = f64::NEG_INFINITY;
        for ky in 0..k {
            for kx in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                let ix = (ox * stride + kx) as isize - pad as isize;
                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                    m = m.max(x.at([b, ch, iy as usize, ix as usize]));
                }
            }
        }
        m
    })
}

/// Half-pixel bilinear upsampling by an integer factor, source coordinates
/// clamped to the border.
pub fn bilinear_upsample(x: &Tensor<f64>, s: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.dims();
    let src = |i: usize, len: usize| -> (usize, usize, f64) {
        let p = ((i as f64 + 0.5) / s as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, p - lo as f64)
    };
    Tensor::from_fn([n, c, h * s, w * s], |[b, ch, oy, ox]| {
        let (y0, y1, fy) = src(oy, h);
        let (x0, x1, fx) = src(ox, w);
        let v = |y, xx| x.at([b, ch, y, xx]);
        (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1))
            + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1))
    })
}

fn param<'a>(store: &'a ParamStore<f64>, prefix: &str, name: &str) -> &'a Tensor<f64> {
    store
        .get(&format!("{prefix}.{name}"))
        .unwrap_or_else(|| panic!("reference: missing {prefix}.{name}"))
}

/// All intermediates of one strip receptive field module evaluation, written
/// out step by step.
#[derive(Clone, Debug)]
pub struct SrfmSteps {
    pub f_sq: Tensor<f64>,
    pub f_h: Tensor<f64>,
    pub f_v: Tensor<f64>,
    pub y: Tensor<f64>,
    pub x_weighted: Tensor<f64>,
    pub p_h: Tensor<f64>,
    pub p_v: Tensor<f64>,
    pub z: Tensor<f64>,
    pub out: Tensor<f64>,
}

pub fn srfm(x: &Tensor<f64>, store: &ParamStore<f64>, prefix: &str, k: SrfmKernels) -> SrfmSteps {
    let p = |name: &str| param(store, prefix, name);
    let dw = |t: &Tensor<f64>, part: &str| {
        depthwise_same(
            t,
            p(&format!("{part}.weight")),
            p(&format!("{part}.bias")),
            (1, 1),
        )
    };
    let [n, c, h, w] = x.dims();
    assert_eq!(p("convh.weight").dims(), [c, 1, 1, k.k_h]);
    assert_eq!(p("convv.weight").dims(), [c, 1, k.k_v, 1]);

    let f_sq = dw(x, "dw");
    let f_h = dw(&f_sq, "convh");
    let f_v = dw(&f_sq, "convv");
    let y = pointwise(&f_v, p("pw.weight"), p("pw.bias"));
    let x_weighted = Tensor::from_fn(x.dims(), |i| x.at(i) * y.at(i));

    // strip pooling: mean over the whole height / width
    let p_h = Tensor::from_fn([n, c, 1, w], |[b, ch, _, xx]| {
        (0..h).map(|yy| f_h.at([b, ch, yy, xx])).sum::<f64>() / h as f64
    });
    let p_v = Tensor::from_fn([n, c, h, 1], |[b, ch, yy, _]| {
        (0..w).map(|xx| f_v.at([b, ch, yy, xx])).sum::<f64>() / w as f64
    });
    let f_h_small = dw(&p_h, "smallh");
    let f_v_small = dw(&p_v, "smallv");
    let z = Tensor::from_fn(x.dims(), |[b, ch, yy, xx]| {
        (f_h_small.at([b, ch, 0, xx]) + f_v_small.at([b, ch, yy, 0])).max(0.0)
    });
    let out = Tensor::from_fn(x.dims(), |i| x_weighted.at(i) + z.at(i));
    SrfmSteps {
        f_sq,
        f_h,
        f_v,
        y,
        x_weighted,
        p_h,
        p_v,
        z,
        out,
    }
}

/// Large separable kernel attention applied to `x`.
pub fn lska(x: &Tensor<f64>, store: &ParamStore<f64>, prefix: &str, d: usize) -> Tensor<f64> {
    let p = |name: &str| param(store, prefix, name);
    let a = depthwise_same(x, p("dwh.weight"), p("dwh.bias"), (1, 1));
    let a = depthwise_same(&a, p("dwv.weight"), p("dwv.bias"), (1, 1));
    let a = depthwise_same(&a, p("dwdh.weight"), p("dwdh.bias"), (1, d));
    let a = depthwise_same(&a, p("dwdv.weight"), p("dwdv.bias"), (d, 1));
    let attn = pointwise(&a, p("pw.weight"), p("pw.bias"));
    Tensor::from_fn(x.dims(), |i| x.at(i) * attn.at(i))
}
