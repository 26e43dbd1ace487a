use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor};

pub fn upsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::shape(
            "upsample_nearest",
            "factor must be at least 1",
        ));
    }
    let [n, c, h, w] = x.dims();
    Ok(Tensor::from_fn(
        [n, c, h * factor, w * factor],
        |[b, ch, y, xx]| x.at([b, ch, y / factor, xx / factor]),
    ))
}

pub(crate) fn upsample_nearest_backward<T: Real>(
    x_dims: Dims,
    factor: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let [n, c, h, w] = x_dims;
    let ow = w * factor;
    let mut gx = vec![T::zero(); n * c * h * w];
    for (i, &g) in grad_out.data().iter().enumerate() {
        let xx = i % ow;
        let rest = i / ow;
        let y = rest % (h * factor);
        let plane = rest / (h * factor);
        let o = (plane * h + y / factor) * w + xx / factor;
        gx[o] = gx[o] + g;
    }
    Tensor::from_raw(x_dims, gx)
}

/// Source coordinates of a regular `factor`× upsampling grid, in input pixel
/// units with pixel centres at integers (half-pixel alignment). Channel 0 holds
/// rows, channel 1 columns.
pub fn upsample_grid<T: Real>(n: usize, h: usize, w: usize, factor: usize) -> Tensor<T> {
    let s = factor as f64;
    Tensor::from_fn([n, 2, h * factor, w * factor], |[_, axis, y, x]| {
        let i = if axis == 0 { y } else { x };
        T::of((i as f64 + 0.5) / s - 0.5)
    })
}

struct Tap<T> {
    i0: usize,
    i1: usize,
    frac: T,
    /// False when the coordinate was clamped, which zeroes its derivative.
    inside: bool,
}

fn tap<T: Real>(coord: T, len: usize) -> Tap<T> {
    let hi = T::of((len - 1) as f64);
    let inside = coord >= T::zero() && coord <= hi;
    let c = coord.max(T::zero()).min(hi);
    let f = c.floor();
    let i0 = f.to_usize().unwrap_or(0).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    Tap {
        i0,
        i1,
        frac: c - f,
        inside,
    }
}

fn check_coords<T: Real>(x: &Tensor<T>, coords: &Tensor<T>) -> Result<()> {
    let [n, _, h, w] = x.dims();
    let cd = coords.dims();
    if cd[0] != n || cd[1] != 2 {
        return Err(Error::shape(
            "grid_sample_bilinear",
            format!("coords dims {:?}, expected [{n}, 2, Ho, Wo]", cd),
        ));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("grid_sample_bilinear", "empty input plane"));
    }
    Ok(())
}

/// Bilinear read of `x` at continuous (row, col) pixel coordinates.
/// Coordinates outside the image clamp to the border.
pub fn grid_sample_bilinear<T: Real>(x: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    check_coords(x, coords)?;
    let [n, c, h, w] = x.dims();
    let [_, _, oh, ow] = coords.dims();
    let op = oh * ow;
    let mut out = Vec::with_capacity(n * c * op);
    for b in 0..n {
        let cy = &coords.data()[(b * 2) * op..][..op];
        let cx = &coords.data()[(b * 2 + 1) * op..][..op];
        let taps: Vec<_> = (0..op).map(|k| (tap(cy[k], h), tap(cx[k], w))).collect();
        for ch in 0..c {
            let xp = &x.data()[(b * c + ch) * h * w..][..h * w];
            for (ty, tx) in &taps {
                let v00 = xp[ty.i0 * w + tx.i0];
                let v01 = xp[ty.i0 * w + tx.i1];
                let v10 = xp[ty.i1 * w + tx.i0];
                let v11 = xp[ty.i1 * w + tx.i1];
                let top = v00 + (v01 - v00) * tx.frac;
                let bot = v10 + (v11 - v10) * tx.frac;
                out.push(top + (bot - top) * ty.frac);
            }
        }
    }
    Ok(Tensor::from_raw([n, c, oh, ow], out))
}

pub(crate) fn grid_sample_bilinear_backward<T: Real>(
    x: &Tensor<T>,
    coords: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.dims();
    let [_, _, oh, ow] = coords.dims();
    let op = oh * ow;
    let mut gx = vec![T::zero(); x.len()];
    let mut gc = vec![T::zero(); coords.len()];
    let one = T::one();
    for b in 0..n {
        let cy = &coords.data()[(b * 2) * op..][..op];
        let cx = &coords.data()[(b * 2 + 1) * op..][..op];
        let taps: Vec<_> = (0..op).map(|k| (tap(cy[k], h), tap(cx[k], w))).collect();
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            let xp = &x.data()[base..][..h * w];
            let gp = &grad_out.data()[(b * c + ch) * op..][..op];
            for (k, (ty, tx)) in taps.iter().enumerate() {
                let g = gp[k];
                let (fy, fx) = (ty.frac, tx.frac);
                let i00 = ty.i0 * w + tx.i0;
                let i01 = ty.i0 * w + tx.i1;
                let i10 = ty.i1 * w + tx.i0;
                let i11 = ty.i1 * w + tx.i1;
                gx[base + i00] = gx[base + i00] + g * (one - fy) * (one - fx);
                gx[base + i01] = gx[base + i01] + g * (one - fy) * fx;
                gx[base + i10] = gx[base + i10] + g * fy * (one - fx);
                gx[base + i11] = gx[base + i11] + g * fy * fx;
                let (v00, v01, v10, v11) = (xp[i00], xp[i01], xp[i10], xp[i11]);
                if ty.inside && ty.i1 != ty.i0 {
                    let d = (one - fx) * (v10 - v00) + fx * (v11 - v01);
                    let j = (b * 2) * op + k;
                    gc[j] = gc[j] + g * d;
                }
                if tx.inside && tx.i1 != tx.i0 {
                    let d = (one - fy) * (v01 - v00) + fy * (v11 - v10);
                    let j = (b * 2 + 1) * op + k;
                    gc[j] = gc[j] + g * d;
                }
            }
        }
    }
    (
        Tensor::from_raw(x.dims(), gx),
        Tensor::from_raw(coords.dims(), gc),
    )
}

/// Rearrange N×(C·s²)×H×W into N×C×(H·s)×(W·s); input channel `c·s² + i·s + j`
/// becomes sub-pixel (i, j) of output channel `c`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, cs, h, w] = x.dims();
    if s == 0 || cs % (s * s) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{cs} channels not divisible by {s}²"),
        ));
    }
    let c = cs / (s * s);
    Ok(Tensor::from_fn([n, c, h * s, w * s], |[b, ch, y, xx]| {
        x.at([b, ch * s * s + (y % s) * s + xx % s, y / s, xx / s])
    }))
}

pub(crate) fn pixel_unshuffle<T: Real>(g: &Tensor<T>, s: usize) -> Tensor<T> {
    let [n, c, hs, ws] = g.dims();
    Tensor::from_fn([n, c * s * s, hs / s, ws / s], |[b, k, y, xx]| {
        let ch = k / (s * s);
        let i = (k % (s * s)) / s;
        let j = k % s;
        g.at([b, ch, y * s + i, xx * s + j])
    })
}
