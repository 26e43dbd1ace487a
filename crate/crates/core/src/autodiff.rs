//! Reverse-mode differentiation over a linear tape.
//!
//! Every [`Graph`] call appends one node holding its value and whatever the
//! vector-Jacobian product needs. [`Tape::backward`] walks the nodes in
//! reverse once, so replaying the same forward sequence gives bit-identical
//! gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::{self, Activation, ConvSpec, Pad2d};
use crate::params::ParamStore;
use crate::tensor::{Dims, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Constant,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Pad {
        x: Var,
        p: Pad2d,
    },
    AvgPool {
        x: Var,
        window: (usize, usize),
        stride: (usize, usize),
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Hadamard {
        x: Var,
        y: Var,
    },
    Add {
        x: Var,
        y: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Affine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Expand {
        x: Var,
    },
    Nearest {
        x: Var,
        factor: usize,
    },
    GridSample {
        x: Var,
        coords: Var,
    },
    Shuffle {
        x: Var,
        s: usize,
    },
    Sum {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<T>>,
    params: Option<&'a ParamStore<T>>,
    param_vars: BTreeMap<String, Var>,
    leaves: Vec<Var>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Tape {
            nodes: Vec::new(),
            params: None,
            param_vars: BTreeMap::new(),
            leaves: Vec::new(),
        }
    }
}

/// Result of one backward pass.
pub struct Gradients<T: Real> {
    params: BTreeMap<String, Tensor<T>>,
    leaves: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a named parameter. Every parameter of the store the tape
    /// was built with has an entry, zero if it did not influence the output.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Gradient of a leaf created with [`Tape::leaf`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_params(params: &'a ParamStore<T>) -> Self {
        Tape {
            params: Some(params),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// An input that gets a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Leaf);
        self.leaves.push(v);
        v
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.val(output);
        if out.len() != 1 {
            return Err(Error::NotScalar(out.dims()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::ones(out.dims()));
        let mut kept: BTreeMap<Var, Tensor<T>> = BTreeMap::new();

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    kept.insert(Var(i), g);
                }
                Op::Constant => {}
                Op::Conv { x, w, b, spec } => {
                    let cg = ops::conv2d_backward(self.val(*x), self.val(*w), spec, &g)?;
                    accumulate(&mut grads, *x, cg.input);
                    accumulate(&mut grads, *w, cg.weight);
                    if let (Some(b), Some(gb)) = (b, cg.bias) {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Pad { x, p } => {
                    accumulate(
                        &mut grads,
                        *x,
                        ops::pad_backward(self.val(*x).dims(), *p, &g),
                    );
                }
                Op::AvgPool { x, window, stride } => {
                    let gx = ops::avg_pool_backward(self.val(*x).dims(), *window, *stride, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxPool { x, argmax } => {
                    accumulate(
                        &mut grads,
                        *x,
                        ops::max_pool_backward(self.val(*x).dims(), argmax, &g),
                    );
                }
                Op::Act { x, kind } => {
                    let gx = self
                        .val(*x)
                        .zip_map(&g, |xv, gv| gv * kind.derivative(xv))?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Hadamard { x, y } => {
                    let gx = g.zip_map(self.val(*y), |a, b| a * b)?;
                    let gy = g.zip_map(self.val(*x), |a, b| a * b)?;
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *y, gy);
                }
                Op::Add { x, y } => {
                    accumulate(&mut grads, *x, g.clone());
                    accumulate(&mut grads, *y, g);
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    accumulate(&mut grads, *x, g.map(|v| v * f));
                }
                Op::Affine { x, scale, shift } => {
                    let (gx, gs, gb) =
                        ops::channel_affine_backward(self.val(*x), self.val(*scale), &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *scale, gs);
                    accumulate(&mut grads, *shift, gb);
                }
                Op::Concat { parts } => {
                    let mut start = 0;
                    for p in parts {
                        let c = self.val(*p).channels();
                        accumulate(&mut grads, *p, ops::slice_channels(&g, start, c)?);
                        start += c;
                    }
                }
                Op::Slice { x, start } => {
                    let gx = ops::slice_channels_backward(self.val(*x).dims(), *start, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Expand { x } => {
                    accumulate(&mut grads, *x, ops::reduce_to(&g, self.val(*x).dims()));
                }
                Op::Nearest { x, factor } => {
                    let gx = ops::upsample_nearest_backward(self.val(*x).dims(), *factor, &g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::GridSample { x, coords } => {
                    let (gx, gc) =
                        ops::grid_sample_bilinear_backward(self.val(*x), self.val(*coords), &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *coords, gc);
                }
                Op::Shuffle { x, s } => {
                    accumulate(&mut grads, *x, ops::pixel_unshuffle(&g, *s));
                }
                Op::Sum { x } => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(self.val(*x).dims(), gv));
                }
            }
        }

        let mut params = BTreeMap::new();
        if let Some(store) = self.params {
            for (name, t) in store.iter() {
                let g = self
                    .param_vars
                    .get(name)
                    .and_then(|v| kept.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.dims()));
                params.insert(name.to_string(), g);
            }
        }
        let leaves = self
            .leaves
            .iter()
            .map(|&v| {
                let g = kept
                    .get(&v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.val(v).dims()));
                (v, g)
            })
            .collect();
        Ok(Gradients { params, leaves })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    let slot = &mut grads[v.0];
    *slot = Some(match slot.take() {
        None => g,
        Some(prev) => prev.zip_map(&g, |a, b| a + b).expect("gradient dims agree"),
    });
}

impl<T: Real> Graph<T> for Tape<'_, T> {
    type V = Var;

    fn value<'b>(&'b self, v: &'b Var) -> &'b Tensor<T> {
        self.val(*v)
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant)
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .require(name)?
            .clone();
        let v = self.push(t, Op::Leaf);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, spec: &ConvSpec) -> Result<Var> {
        let y = ops::conv2d(self.val(*x), self.val(*w), b.map(|b| self.val(*b)), spec)?;
        Ok(self.push(
            y,
            Op::Conv {
                x: *x,
                w: *w,
                b: b.copied(),
                spec: *spec,
            },
        ))
    }

    fn pad(&mut self, x: &Var, p: Pad2d) -> Var {
        let y = ops::pad(self.val(*x), p);
        self.push(y, Op::Pad { x: *x, p })
    }

    fn avg_pool(&mut self, x: &Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let y = ops::avg_pool(self.val(*x), window, stride)?;
        Ok(self.push(
            y,
            Op::AvgPool {
                x: *x,
                window,
                stride,
            },
        ))
    }

    fn max_pool(
        &mut self,
        x: &Var,
        window: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (y, argmax) = ops::max_pool_with_argmax(self.val(*x), window, stride, padding)?;
        Ok(self.push(y, Op::MaxPool { x: *x, argmax }))
    }

    fn activation(&mut self, x: &Var, kind: Activation) -> Var {
        let y = ops::activation(self.val(*x), kind);
        self.push(y, Op::Act { x: *x, kind })
    }

    fn hadamard(&mut self, x: &Var, y: &Var) -> Result<Var> {
        let z = ops::hadamard(self.val(*x), self.val(*y))?;
        Ok(self.push(z, Op::Hadamard { x: *x, y: *y }))
    }

    fn add(&mut self, x: &Var, y: &Var) -> Result<Var> {
        let z = ops::add(self.val(*x), self.val(*y))?;
        Ok(self.push(z, Op::Add { x: *x, y: *y }))
    }

    fn scale(&mut self, x: &Var, factor: T) -> Var {
        let y = ops::scale(self.val(*x), factor);
        self.push(y, Op::Scale { x: *x, factor })
    }

    fn channel_affine(&mut self, x: &Var, scale: &Var, shift: &Var) -> Result<Var> {
        let y = ops::channel_affine(self.val(*x), self.val(*scale), self.val(*shift))?;
        Ok(self.push(
            y,
            Op::Affine {
                x: *x,
                scale: *scale,
                shift: *shift,
            },
        ))
    }

    fn concat_channels(&mut self, parts: &[&Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|p| self.val(**p)).collect();
        let y = ops::concat_channels(&vals)?;
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.iter().map(|p| **p).collect(),
            },
        ))
    }

    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let y = ops::slice_channels(self.val(*x), start, len)?;
        Ok(self.push(y, Op::Slice { x: *x, start }))
    }

    fn broadcast_expand(&mut self, x: &Var, target: Dims) -> Result<Var> {
        let y = ops::broadcast_expand(self.val(*x), target)?;
        Ok(self.push(y, Op::Expand { x: *x }))
    }

    fn upsample_nearest(&mut self, x: &Var, factor: usize) -> Result<Var> {
        let y = ops::upsample_nearest(self.val(*x), factor)?;
        Ok(self.push(y, Op::Nearest { x: *x, factor }))
    }

    fn grid_sample_bilinear(&mut self, x: &Var, coords: &Var) -> Result<Var> {
        let y = ops::grid_sample_bilinear(self.val(*x), self.val(*coords))?;
        Ok(self.push(
            y,
            Op::GridSample {
                x: *x,
                coords: *coords,
            },
        ))
    }

    fn pixel_shuffle(&mut self, x: &Var, s: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(self.val(*x), s)?;
        Ok(self.push(y, Op::Shuffle { x: *x, s }))
    }

    fn sum(&mut self, x: &Var) -> Var {
        let y = Tensor::scalar(self.val(*x).sum());
        self.push(y, Op::Sum { x: *x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn([1, 2, 3, 3], |[_, c, h, w]| {
            (c + h + w) as f64
        }));
        let s = tape.sum(&x);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dead_relu_gives_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full([1, 1, 2, 2], -0.5));
        let r = tape.activation(&x, Activation::Relu);
        let s = tape.sum(&r);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros([1, 1, 2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let store = ParamStore::from_entries([
            ("used".to_string(), Tensor::<f64>::full([1, 1, 1, 1], 3.0)),
            ("unused".to_string(), Tensor::<f64>::full([1, 2, 1, 1], 1.0)),
        ])
        .unwrap();
        let mut tape = Tape::with_params(&store);
        let x = tape.leaf(Tensor::full([1, 1, 2, 2], 2.0));
        let w = tape.param("used").unwrap();
        // requesting the same name twice must hand back the same leaf
        assert_eq!(tape.param("used").unwrap(), w);
        let y = tape.conv2d(&x, &w, None, &ConvSpec::new(1, 1)).unwrap();
        let s = tape.sum(&y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param("used").unwrap().data(), &[8.0]);
        assert_eq!(g.param("unused").unwrap().data(), &[0.0, 0.0]);
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 3.0));
        assert!(tape.param("missing").is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full([1, 1, 1, 3], 2.0));
        let y = tape.hadamard(&x, &x).unwrap();
        let z = tape.add(&y, &x).unwrap();
        let s = tape.sum(&z);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 5.0));
    }
}
