use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn pooled_len(
    len: usize,
    window: usize,
    stride: usize,
    pad: usize,
    op: &'static str,
) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::shape(op, "window and stride must be positive"));
    }
    if window > len + 2 * pad {
        return Err(Error::shape(
            op,
            format!("window {window} larger than input extent {len} (padding {pad})"),
        ));
    }
    Ok((len + 2 * pad - window) / stride + 1)
}

pub fn avg_pool<T: Real>(
    x: &Tensor<T>,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims();
    let oh = pooled_len(h, window.0, stride.0, 0, "avg_pool")?;
    let ow = pooled_len(w, window.1, stride.1, 0, "avg_pool")?;
    let inv = T::one() / T::of((window.0 * window.1) as f64);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let xp = &xd[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for ky in 0..window.0 {
                    let row = &xp[(oy * stride.0 + ky) * w..];
                    for kx in 0..window.1 {
                        acc = acc + row[ox * stride.1 + kx];
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    Ok(Tensor::from_raw([n, c, oh, ow], out))
}

pub fn avg_pool_backward<T: Real>(
    x_dims: [usize; 4],
    window: (usize, usize),
    stride: (usize, usize),
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let [n, c, h, w] = x_dims;
    let [_, _, oh, ow] = grad_out.dims();
    let inv = T::one() / T::of((window.0 * window.1) as f64);
    let gd = grad_out.data();
    let mut gx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let gxp = &mut gx[p * h * w..][..h * w];
        let gp = &gd[p * oh * ow..][..oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gp[oy * ow + ox] * inv;
                for ky in 0..window.0 {
                    for kx in 0..window.1 {
                        let i = (oy * stride.0 + ky) * w + ox * stride.1 + kx;
                        gxp[i] = gxp[i] + g;
                    }
                }
            }
        }
    }
    Tensor::from_raw(x_dims, gx)
}

pub fn max_pool<T: Real>(
    x: &Tensor<T>,
    window: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    Ok(max_pool_with_argmax(x, window, stride, padding)?.0)
}

/// Windowed maximum plus, per output element, the flat index of the winning
/// input element. Ties go to the first element in row-major window order.
pub(crate) fn max_pool_with_argmax<T: Real>(
    x: &Tensor<T>,
    window: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims();
    if padding.0 >= window.0.max(1) || padding.1 >= window.1.max(1) {
        return Err(Error::shape(
            "max_pool",
            "padding must be smaller than the window",
        ));
    }
    let oh = pooled_len(h, window.0, stride.0, padding.0, "max_pool")?;
    let ow = pooled_len(w, window.1, stride.1, padding.1, "max_pool")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = usize::MAX;
                for ky in 0..window.0 {
                    let iy = (oy * stride.0 + ky) as isize - padding.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..window.1 {
                        let ix = (ox * stride.1 + kx) as isize - padding.1 as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = base + iy as usize * w + ix as usize;
                        if best_i == usize::MAX || xd[i] > best {
                            best = xd[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::from_raw([n, c, oh, ow], out), arg))
}

pub(crate) fn max_pool_backward<T: Real>(
    x_dims: [usize; 4],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut gx = vec![T::zero(); x_dims.iter().product()];
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gx[i] = gx[i] + g;
    }
    Tensor::from_raw(x_dims, gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: [usize; 4], v: &[f64]) -> Tensor<f64> {
        Tensor::new(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn column_and_row_means() {
        let x = t([1, 1, 2, 3], &[1., 2., 3., 5., 6., 7.]);
        let cols = avg_pool(&x, (2, 1), (1, 1)).unwrap();
        assert_eq!(cols.dims(), [1, 1, 1, 3]);
        assert_eq!(cols.data(), &[3., 4., 5.]);
        let rows = avg_pool(&x, (1, 3), (1, 1)).unwrap();
        assert_eq!(rows.dims(), [1, 1, 2, 1]);
        assert_eq!(rows.data(), &[2., 6.]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f64>::full([2, 3, 5, 4], 2.5);
        for window in [(1, 1), (2, 3), (5, 4), (3, 1)] {
            let y = avg_pool(&x, window, (1, 2)).unwrap();
            assert!(y.data().iter().all(|&v| v == 2.5));
            let y = max_pool(&x, window, (1, 1), (0, 0)).unwrap();
            assert!(y.data().iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn unit_window_is_identity() {
        let x = Tensor::<f64>::from_fn([1, 2, 3, 4], |[_, c, h, w]| {
            (c * 7 + h * 3 + w) as f64 - 4.0
        });
        assert_eq!(avg_pool(&x, (1, 1), (1, 1)).unwrap(), x);
        assert_eq!(max_pool(&x, (1, 1), (1, 1), (0, 0)).unwrap(), x);
    }

    #[test]
    fn max_examples() {
        let x = t([1, 1, 2, 2], &[1., 2., 3., 4.]);
        assert_eq!(max_pool(&x, (2, 2), (1, 1), (0, 0)).unwrap().data(), &[4.]);
        let ramp = t([1, 1, 1, 5], &[1., 2., 3., 4., 5.]);
        let y = max_pool(&ramp, (1, 5), (1, 1), (0, 2)).unwrap();
        assert_eq!(y.data(), &[3., 4., 5., 5., 5.]);
    }

    #[test]
    fn oversized_window_rejected() {
        let x = Tensor::<f64>::zeros([1, 1, 2, 3]);
        assert!(avg_pool(&x, (3, 1), (1, 1)).is_err());
        assert!(max_pool(&x, (1, 4), (1, 1), (0, 0)).is_err());
        assert!(max_pool(&x, (3, 3), (1, 1), (3, 1)).is_err());
    }
}
