use crate::error::{Error, Result};
use crate::tensor::{numel, Dims, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    /// Tanh approximation.
    Gelu,
    Silu,
    Sigmoid,
}

const GELU_C: f64 = 0.044_715;

fn sqrt_2_over_pi<T: Real>() -> T {
    T::of((2.0 / std::f64::consts::PI).sqrt())
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Gelu => {
                let u = sqrt_2_over_pi::<T>() * (x + T::of(GELU_C) * x * x * x);
                T::of(0.5) * x * (T::one() + u.tanh())
            }
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => {
                let k = sqrt_2_over_pi::<T>();
                let c = T::of(GELU_C);
                let t = (k * (x + c * x * x * x)).tanh();
                let half = T::of(0.5);
                half * (T::one() + t)
                    + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
        }
    }
}

pub fn activation<T: Real>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

pub fn hadamard<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims("hadamard", x, y)?;
    x.zip_map(y, |a, b| a * b)
}

pub fn add<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims("add", x, y)?;
    x.zip_map(y, |a, b| a + b)
}

pub fn scale<T: Real>(x: &Tensor<T>, factor: T) -> Tensor<T> {
    x.map(|v| v * factor)
}

fn same_dims<T: Real>(op: &'static str, x: &Tensor<T>, y: &Tensor<T>) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::shape(
            op,
            format!("dims {:?} vs {:?}", x.dims(), y.dims()),
        ));
    }
    Ok(())
}

/// `x * scale[c] + shift[c]` with per-channel 1×C×1×1 vectors.
pub fn channel_affine<T: Real>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims();
    for (name, v) in [("scale", scale), ("shift", shift)] {
        if v.dims() != [1, c, 1, 1] {
            return Err(Error::shape(
                "channel_affine",
                format!("{name} dims {:?}, expected [1, {c}, 1, 1]", v.dims()),
            ));
        }
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(x.len());
    for p in 0..n * c {
        let ch = p % c;
        let (a, b) = (scale.data()[ch], shift.data()[ch]);
        out.extend(x.data()[p * plane..][..plane].iter().map(|&v| v * a + b));
    }
    Ok(Tensor::from_raw([n, c, h, w], out))
}

pub(crate) fn channel_affine_backward<T: Real>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.dims();
    let plane = h * w;
    let mut gx = Vec::with_capacity(x.len());
    let mut gs = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for p in 0..n * c {
        let ch = p % c;
        let a = scale.data()[ch];
        let xs = &x.data()[p * plane..][..plane];
        let gs_plane = &grad_out.data()[p * plane..][..plane];
        for (&xv, &g) in xs.iter().zip(gs_plane) {
            gx.push(g * a);
            gs[ch] = gs[ch] + g * xv;
            gb[ch] = gb[ch] + g;
        }
    }
    (
        Tensor::from_raw(x.dims(), gx),
        Tensor::channel_vector(gs),
        Tensor::channel_vector(gb),
    )
}

pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let [n, _, h, w] = first.dims();
    let mut c_total = 0;
    for p in parts {
        let d = p.dims();
        if d[0] != n || d[2] != h || d[3] != w {
            return Err(Error::shape(
                "concat_channels",
                format!(
                    "dims {:?} incompatible with {:?} (N, H, W must agree)",
                    d,
                    first.dims()
                ),
            ));
        }
        c_total += d[1];
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c_total * plane);
    for b in 0..n {
        for p in parts {
            let c = p.channels();
            out.extend_from_slice(&p.data()[b * c * plane..][..c * plane]);
        }
    }
    Ok(Tensor::from_raw([n, c_total, h, w], out))
}

pub fn slice_channels<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims();
    if start + len > c || len == 0 {
        return Err(Error::shape(
            "slice_channels",
            format!("range {start}..{} outside {c} channels", start + len),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        out.extend_from_slice(&x.data()[(b * c + start) * plane..][..len * plane]);
    }
    Ok(Tensor::from_raw([n, len, h, w], out))
}

/// Scatter a slice gradient back into the full channel range.
pub(crate) fn slice_channels_backward<T: Real>(
    x_dims: Dims,
    start: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let [n, c, h, w] = x_dims;
    let len = grad_out.channels();
    let plane = h * w;
    let mut gx = vec![T::zero(); numel(&x_dims)];
    for b in 0..n {
        gx[(b * c + start) * plane..][..len * plane]
            .copy_from_slice(&grad_out.data()[b * len * plane..][..len * plane]);
    }
    Tensor::from_raw(x_dims, gx)
}

/// Replicate along every axis where the source has extent 1 and the target does not.
pub fn broadcast_expand<T: Real>(x: &Tensor<T>, target: Dims) -> Result<Tensor<T>> {
    let src = x.dims();
    for axis in 0..4 {
        if src[axis] != target[axis] && src[axis] != 1 {
            return Err(Error::shape(
                "broadcast_expand",
                format!("cannot expand {:?} to {:?} (axis {axis})", src, target),
            ));
        }
    }
    let pick = |i: usize, axis: usize| if src[axis] == 1 { 0 } else { i };
    Ok(Tensor::from_fn(target, |[n, c, h, w]| {
        x.at([pick(n, 0), pick(c, 1), pick(h, 2), pick(w, 3)])
    }))
}

/// Sum a gradient over the axes that `broadcast_expand` replicated.
pub(crate) fn reduce_to<T: Real>(grad: &Tensor<T>, src: Dims) -> Tensor<T> {
    let g = grad.dims();
    let mut out = vec![T::zero(); numel(&src)];
    let pick = |i: usize, axis: usize| if src[axis] == 1 { 0 } else { i };
    let mut k = 0;
    for n in 0..g[0] {
        for c in 0..g[1] {
            for h in 0..g[2] {
                for w in 0..g[3] {
                    let o = ((pick(n, 0) * src[1] + pick(c, 1)) * src[2] + pick(h, 2)) * src[3]
                        + pick(w, 3);
                    out[o] = out[o] + grad.data()[k];
                    k += 1;
                }
            }
        }
    }
    Tensor::from_raw(src, out)
}

/// Explicit zero padding, for kernels whose "same" padding is asymmetric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Pad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad2d {
    /// Padding that keeps length fixed for a kernel of the given dilated span,
    /// placing the extra element (even spans) at the end.
    pub fn same_for_span(span_h: usize, span_w: usize) -> Self {
        let (th, tw) = (span_h - 1, span_w - 1);
        Pad2d {
            top: th / 2,
            bottom: th - th / 2,
            left: tw / 2,
            right: tw - tw / 2,
        }
    }
}

pub fn pad<T: Real>(x: &Tensor<T>, p: Pad2d) -> Tensor<T> {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (h + p.top + p.bottom, w + p.left + p.right);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for q in 0..n * c {
        for y in 0..h {
            let src = &x.data()[(q * h + y) * w..][..w];
            out[(q * oh + y + p.top) * ow + p.left..][..w].copy_from_slice(src);
        }
    }
    Tensor::from_raw([n, c, oh, ow], out)
}

pub(crate) fn pad_backward<T: Real>(x_dims: Dims, p: Pad2d, grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x_dims;
    let ow = grad_out.width();
    let oh = grad_out.height();
    let mut out = Vec::with_capacity(numel(&x_dims));
    for q in 0..n * c {
        for y in 0..h {
            out.extend_from_slice(&grad_out.data()[(q * oh + y + p.top) * ow + p.left..][..w]);
        }
    }
    Tensor::from_raw(x_dims, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_points() {
        assert_eq!(Activation::Relu.apply(-1.0f64), 0.0);
        assert_eq!(Activation::Relu.apply(2.0f64), 2.0);
        assert_eq!(Activation::Gelu.apply(0.0f64), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::Silu.apply(0.0f64), 0.0);
        // tanh-form value at 1.0
        assert!((Activation::Gelu.apply(1.0f64) - 0.841_191_990_608_276_8).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!(sigmoid(-80.0f32).is_finite());
    }

    #[test]
    fn expand_then_add_relu_micro_case() {
        let row = Tensor::<f64>::new([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let col = Tensor::<f64>::new([1, 1, 2, 1], vec![10.0, 20.0]).unwrap();
        let a = broadcast_expand(&row, [1, 1, 2, 2]).unwrap();
        assert_eq!(a.data(), &[1.0, 2.0, 1.0, 2.0]);
        let b = broadcast_expand(&col, [1, 1, 2, 2]).unwrap();
        let z = activation(&add(&a, &b).unwrap(), Activation::Relu);
        assert_eq!(z.data(), &[11.0, 12.0, 21.0, 22.0]);
        assert!(broadcast_expand(&row, [1, 1, 2, 3]).is_err());
    }

    #[test]
    fn reduce_inverts_expand_sum() {
        let g = Tensor::<f64>::ones([2, 3, 4, 5]);
        let r = reduce_to(&g, [1, 3, 1, 5]);
        assert!(r.data().iter().all(|&v| v == 8.0));
    }

    #[test]
    fn concat_order_and_slice() {
        let a = Tensor::<f64>::from_fn([2, 2, 2, 2], |[n, c, h, w]| {
            (n * 100 + c * 10 + h * 2 + w) as f64
        });
        let b = Tensor::<f64>::from_fn([2, 3, 2, 2], |[n, c, ..]| -((n * 10 + c) as f64) - 1.0);
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.dims(), [2, 5, 2, 2]);
        assert_eq!(slice_channels(&cat, 0, 2).unwrap(), a);
        assert_eq!(slice_channels(&cat, 2, 3).unwrap(), b);
        assert!(concat_channels(&[&a, &Tensor::zeros([2, 1, 3, 2])]).is_err());
        assert!(slice_channels(&cat, 4, 2).is_err());
    }

    #[test]
    fn hadamard_identities() {
        let x = Tensor::<f64>::from_fn([1, 2, 3, 3], |[_, c, h, w]| (c + h * w) as f64 - 2.5);
        assert_eq!(hadamard(&x, &Tensor::ones(x.dims())).unwrap(), x);
        assert!(hadamard(&x, &Tensor::zeros(x.dims()))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(hadamard(&x, &Tensor::zeros([1, 2, 3, 2])).is_err());
    }

    #[test]
    fn pad_round_trip() {
        let x = Tensor::<f64>::from_fn([1, 2, 2, 3], |[_, c, h, w]| (c * 6 + h * 3 + w) as f64);
        let p = Pad2d {
            top: 1,
            bottom: 2,
            left: 0,
            right: 3,
        };
        let y = pad(&x, p);
        assert_eq!(y.dims(), [1, 2, 5, 6]);
        assert_eq!(y.sum(), x.sum());
        assert_eq!(pad_backward(x.dims(), p, &y), x);
        assert_eq!(
            Pad2d::same_for_span(1, 10),
            Pad2d {
                top: 0,
                bottom: 0,
                left: 4,
                right: 5
            }
        );
    }
}
