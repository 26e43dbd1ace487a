//! Direct grouped/dilated 2-D cross-correlation and its vector-Jacobian products.
//!
//! Each output element is accumulated by exactly one thread in a fixed order
//! (bias, then input channel, then kernel row-major), so results do not depend
//! on the rayon pool size.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(kh: usize, kw: usize) -> Self {
        ConvSpec {
            kernel: (kh, kw),
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            groups: 1,
            has_bias: false,
        }
    }

    /// Stride-1 kernel with symmetric zero padding that preserves H×W.
    /// Only exact for odd effective kernel extents.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self::new(kh, kw).with_padding((kh - 1) / 2, (kw - 1) / 2)
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn with_dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |len: usize, k: usize, s: usize, p: usize, d: usize, name: &str| {
            if k == 0 || s == 0 || d == 0 {
                return Err(Error::shape(
                    "conv2d",
                    format!("{name}: kernel, stride and dilation must be positive"),
                ));
            }
            let span = d * (k - 1) + 1;
            let padded = len + 2 * p;
            if padded < span {
                return Err(Error::shape(
                    "conv2d",
                    format!("{name}: padded extent {padded} smaller than kernel span {span}"),
                ));
            }
            Ok((padded - span) / s + 1)
        };
        let oh = axis(
            h,
            self.kernel.0,
            self.stride.0,
            self.padding.0,
            self.dilation.0,
            "height",
        )?;
        let ow = axis(
            w,
            self.kernel.1,
            self.stride.1,
            self.padding.1,
            self.dilation.1,
            "width",
        )?;
        Ok((oh, ow))
    }
}

/// Output positions `o` in `0..out_len` for which `o * stride + offset` lands in `0..in_len`.
pub(crate) fn valid_range(
    out_len: usize,
    in_len: usize,
    stride: usize,
    offset: isize,
) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + s - 1) / s
    };
    let last = in_len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    let [n, cin, h, w] = x.dims();
    let [cout, cin_g, kh, kw] = weight.dims();
    let g = spec.groups;
    if g == 0 {
        return Err(Error::shape("conv2d", "groups must be positive"));
    }
    if (kh, kw) != spec.kernel {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight kernel {kh}x{kw} differs from spec {:?}",
                spec.kernel
            ),
        ));
    }
    if cin % g != 0 || cout % g != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("channels in={cin} out={cout} not divisible by groups={g}"),
        ));
    }
    if cin_g * g != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input channels: x has {cin}, weight expects {}", cin_g * g),
        ));
    }
    match (bias, spec.has_bias) {
        (Some(b), true) => {
            if b.dims() != [1, cout, 1, 1] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias dims {:?}, expected [1, {cout}, 1, 1]", b.dims()),
                ));
            }
        }
        (None, false) => {}
        (Some(_), false) => {
            return Err(Error::shape(
                "conv2d",
                "bias given but spec has_bias is false",
            ))
        }
        (None, true) => {
            return Err(Error::shape(
                "conv2d",
                "spec has_bias is set but no bias given",
            ))
        }
    }
    let (oh, ow) = spec.output_size(h, w)?;
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        cout_g: cout / g,
        kh,
        kw,
        oh,
        ow,
    })
}

pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let geo = check(x, weight, bias, spec)?;
    let Geometry {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        cout_g,
        kh,
        kw,
        oh,
        ow,
    } = geo;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let xd = x.data();
    let wd = weight.data();
    let plane = oh * ow;
    let mut out = vec![T::zero(); n * cout * plane];
    if plane == 0 {
        return Ok(Tensor::from_raw([n, cout, oh, ow], out));
    }

    out.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, acc)| {
            let (b, oc) = (idx / cout, idx % cout);
            let group = oc / cout_g;
            if let Some(bias) = bias {
                acc.fill(bias.data()[oc]);
            }
            for icg in 0..cin_g {
                let ic = group * cin_g + icg;
                let xp = &xd[(b * cin + ic) * h * w..][..h * w];
                let wk = &wd[(oc * cin_g + icg) * kh * kw..][..kh * kw];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(oh, h, sh, (ky * dh) as isize - ph as isize);
                    for kx in 0..kw {
                        let wv = wk[ky * kw + kx];
                        let offx = (kx * dw) as isize - pw as isize;
                        let (ox_lo, ox_hi) = valid_range(ow, w, sw, offx);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * sh + ky * dh - ph;
                            let xrow = &xp[iy * w..][..w];
                            let orow = &mut acc[oy * ow..][..ow];
                            for (ox, o) in orow.iter_mut().enumerate().take(ox_hi).skip(ox_lo) {
                                let ix = (ox * sw) as isize + offx;
                                *o = *o + wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        });
    Ok(Tensor::from_raw([n, cout, oh, ow], out))
}

/// Gradients of a convolution with respect to input, weight and (if present) bias.
pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let bias_probe = spec
        .has_bias
        .then(|| Tensor::zeros([1, weight.dims()[0], 1, 1]));
    let geo = check(x, weight, bias_probe.as_ref(), spec)?;
    let Geometry {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        cout_g,
        kh,
        kw,
        oh,
        ow,
    } = geo;
    if grad_out.dims() != [n, cout, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad dims {:?}, expected {:?}",
                grad_out.dims(),
                [n, cout, oh, ow]
            ),
        ));
    }
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let plane = oh * ow;

    let mut gx = vec![T::zero(); n * cin * h * w];
    if h * w > 0 {
        gx.par_chunks_mut(h * w).enumerate().for_each(|(idx, gxp)| {
            let (b, ic) = (idx / cin, idx % cin);
            let group = ic / cin_g;
            let icg = ic % cin_g;
            for ocg in 0..cout_g {
                let oc = group * cout_g + ocg;
                let gp = &gd[(b * cout + oc) * plane..][..plane];
                let wk = &wd[(oc * cin_g + icg) * kh * kw..][..kh * kw];
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(oh, h, sh, (ky * dh) as isize - ph as isize);
                    for kx in 0..kw {
                        let wv = wk[ky * kw + kx];
                        let offx = (kx * dw) as isize - pw as isize;
                        let (ox_lo, ox_hi) = valid_range(ow, w, sw, offx);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * sh + ky * dh - ph;
                            let grow = &gp[oy * ow..][..ow];
                            let xrow = &mut gxp[iy * w..][..w];
                            for (ox, &gv) in grow.iter().enumerate().take(ox_hi).skip(ox_lo) {
                                let ix = ((ox * sw) as isize + offx) as usize;
                                xrow[ix] = xrow[ix] + wv * gv;
                            }
                        }
                    }
                }
            }
        });
    }

    let ksize = cin_g * kh * kw;
    let mut gw = vec![T::zero(); cout * ksize];
    gw.par_chunks_mut(ksize).enumerate().for_each(|(oc, gwk)| {
        let group = oc / cout_g;
        for icg in 0..cin_g {
            let ic = group * cin_g + icg;
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(oh, h, sh, (ky * dh) as isize - ph as isize);
                for kx in 0..kw {
                    let offx = (kx * dw) as isize - pw as isize;
                    let (ox_lo, ox_hi) = valid_range(ow, w, sw, offx);
                    let mut acc = T::zero();
                    for b in 0..n {
                        let xp = &xd[(b * cin + ic) * h * w..][..h * w];
                        let gp = &gd[(b * cout + oc) * plane..][..plane];
                        for oy in oy_lo..oy_hi {
                            let iy = oy * sh + ky * dh - ph;
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * sw) as isize + offx) as usize;
                                acc = acc + gp[oy * ow + ox] * xp[iy * w + ix];
                            }
                        }
                    }
                    gwk[(icg * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });

    let gb = spec.has_bias.then(|| {
        let sums = (0..cout)
            .map(|oc| {
                let mut acc = T::zero();
                for b in 0..n {
                    for &v in &gd[(b * cout + oc) * plane..][..plane] {
                        acc = acc + v;
                    }
                }
                acc
            })
            .collect();
        Tensor::channel_vector(sums)
    });

    Ok(ConvGrads {
        input: Tensor::from_raw(x.dims(), gx),
        weight: Tensor::from_raw(weight.dims(), gw),
        bias: gb,
    })
}
