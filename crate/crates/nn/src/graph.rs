//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably for the duration of one
//! forward pass. Each differentiable op appends a node holding a one-shot
//! backward closure; [`Graph::backward`] consumes the graph and returns the
//! parameter gradients. Inference graphs record nothing, so intermediate
//! activations are freed as soon as their [`Var`] handles drop.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::conv::{conv_backward, conv_forward};
use crate::norm::{batch_norm_backward, batch_norm_forward};
use crate::resample::{
    pixel_shuffle, pixel_unshuffle, upsample_linear3d, upsample_linear3d_backward, upsample_nearest2d,
    upsample_nearest2d_backward,
};
use crate::{ConvGeom, NnError, ParamId, ParamStore, Result, Scalar, Shape, Tensor};

/// A value in a graph. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct Var<T> {
    value: Arc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Owned copy of the value (no copy when this is the only handle).
    pub fn into_tensor(self) -> Tensor<T> {
        Arc::try_unwrap(self.value).unwrap_or_else(|shared| (*shared).clone())
    }
}

type Backward<T> = Box<dyn FnOnce(&Tensor<T>, &mut Accum<T>)>;

enum NodeKind<T> {
    Leaf,
    Param(ParamId),
    Op(Option<Backward<T>>),
}

pub(crate) struct Accum<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Accum<T> {
    fn add(&mut self, node: Option<usize>, g: Tensor<T>) {
        let Some(node) = node else { return };
        match &mut self.grads[node] {
            Some(acc) => acc.add_assign(&g).expect("gradient shape matches value"),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to a leaf created by [`Graph::leaf`].
    pub fn leaf(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.node.and_then(|n| self.leaves.get(&n))
    }

    /// Sum of squared gradient entries over all parameters.
    pub fn squared_norm(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }
}

pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    record: bool,
    nodes: RefCell<Vec<NodeKind<T>>>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A recording graph for training.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            record: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A non-recording graph; no gradients are available.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            record: false,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    fn push(&self, kind: NodeKind<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(kind);
        nodes.len() - 1
    }

    fn output(&self, value: Tensor<T>, inputs: &[&Var<T>], backward: impl FnOnce(&Tensor<T>, &mut Accum<T>) + 'static) -> Var<T> {
        let node = (self.record && inputs.iter().any(|v| v.requires_grad()))
            .then(|| self.push(NodeKind::Op(Some(Box::new(backward)))));
        Var {
            value: Arc::new(value),
            node,
        }
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            value: Arc::new(value),
            node: None,
        }
    }

    /// A value whose gradient is reported by [`Gradients::leaf`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let node = self.record.then(|| self.push(NodeKind::Leaf));
        Var {
            value: Arc::new(value),
            node,
        }
    }

    /// A parameter; frozen parameters behave as constants.
    pub fn param(&self, id: ParamId) -> Var<T> {
        let node = (self.record && self.params.is_trainable(id)).then(|| self.push(NodeKind::Param(id)));
        Var {
            value: self.params.shared(id),
            node,
        }
    }

    pub fn conv(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, geom: ConvGeom) -> Result<Var<T>> {
        let y = conv_forward(x.value(), w.value(), b.map(|b| b.value()), geom)?;
        let (xv, wv) = (Arc::clone(&x.value), Arc::clone(&w.value));
        let (xn, wn, bn) = (x.node, w.node, b.and_then(|b| b.node));
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.output(y, &inputs, move |gy, acc| {
            let (gx, gw, gb) = conv_backward(&xv, &wv, gy, geom, xn.is_some(), wn.is_some());
            if let Some(gx) = gx {
                acc.add(xn, gx);
            }
            if let Some(gw) = gw {
                acc.add(wn, gw);
            }
            acc.add(bn, gb);
        }))
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.add_scaled(a, b, T::one())
    }

    /// `a + s * b`.
    pub fn add_scaled(&self, a: &Var<T>, b: &Var<T>, s: T) -> Result<Var<T>> {
        let y = a.value().zip_map(b.value(), |p, q| p + s * q)?;
        let (an, bn) = (a.node, b.node);
        Ok(self.output(y, &[a, b], move |gy, acc| {
            if bn.is_some() {
                acc.add(bn, if s == T::one() { gy.clone() } else { gy.scale(s) });
            }
            acc.add(an, gy.clone());
        }))
    }

    pub fn scale(&self, a: &Var<T>, s: T) -> Var<T> {
        let y = a.value().scale(s);
        let an = a.node;
        self.output(y, &[a], move |gy, acc| acc.add(an, gy.scale(s)))
    }

    pub fn relu(&self, a: &Var<T>) -> Var<T> {
        self.leaky_relu(a, T::zero())
    }

    pub fn leaky_relu(&self, a: &Var<T>, slope: T) -> Var<T> {
        let y = a.value().map(|v| if v > T::zero() { v } else { v * slope });
        let av = Arc::clone(&a.value);
        let an = a.node;
        self.output(y, &[a], move |gy, acc| {
            let g = gy
                .zip_map(&av, |g, v| if v > T::zero() { g } else { g * slope })
                .expect("same shape");
            acc.add(an, g);
        })
    }

    /// Concatenate along the channel axis.
    pub fn concat(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Invalid("concat of zero tensors".into()))?
            .shape();
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.with_c(first.c) != first {
                return Err(NnError::ShapeMismatch {
                    op: "concat",
                    expected: first.with_c(s.c).to_string(),
                    actual: s.to_string(),
                });
            }
            channels.push(s.c);
        }
        let total: usize = channels.iter().sum();
        let out = first.with_c(total);
        let mut data = Vec::with_capacity(out.numel());
        for n in 0..out.n {
            for p in parts {
                data.extend_from_slice(p.value().item(n));
            }
        }
        let y = Tensor::from_vec(out, data)?;
        let nodes: Vec<Option<usize>> = parts.iter().map(|p| p.node).collect();
        Ok(self.output(y, parts, move |gy, acc| {
            let mut c0 = 0;
            for (node, c) in nodes.into_iter().zip(channels) {
                if node.is_some() {
                    acc.add(node, gy.channels(c0, c0 + c));
                }
                c0 += c;
            }
        }))
    }

    pub fn pixel_shuffle(&self, a: &Var<T>, r: usize) -> Result<Var<T>> {
        let s = a.shape();
        if s.d != 1 || s.c % (r * r) != 0 {
            return Err(NnError::ShapeMismatch {
                op: "pixel_shuffle",
                expected: format!("planar input with channels divisible by {}", r * r),
                actual: s.to_string(),
            });
        }
        let y = pixel_shuffle(a.value(), r);
        let an = a.node;
        Ok(self.output(y, &[a], move |gy, acc| acc.add(an, pixel_unshuffle(gy, s, r))))
    }

    pub fn upsample_nearest2d(&self, a: &Var<T>, r: usize) -> Var<T> {
        let s = a.shape();
        let y = upsample_nearest2d(a.value(), r);
        let an = a.node;
        self.output(y, &[a], move |gy, acc| acc.add(an, upsample_nearest2d_backward(gy, s, r)))
    }

    pub fn upsample_linear3d(&self, a: &Var<T>, r: usize) -> Var<T> {
        let s = a.shape();
        let y = upsample_linear3d(a.value(), r);
        let an = a.node;
        self.output(y, &[a], move |gy, acc| acc.add(an, upsample_linear3d_backward(gy, s, r)))
    }

    /// Training-mode batch normalization; `gamma`/`beta` have shape `(1, c, 1, 1, 1)`.
    pub fn batch_norm(&self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let c = x.shape().c;
        let pshape = Shape::new(1, c, 1, 1, 1);
        gamma.value().expect_shape("batch_norm gamma", pshape)?;
        beta.value().expect_shape("batch_norm beta", pshape)?;
        let (y, stats) = batch_norm_forward(x.value(), gamma.value().data(), beta.value().data(), eps);
        let gv = Arc::clone(&gamma.value);
        let (xn, gn, bn) = (x.node, gamma.node, beta.node);
        Ok(self.output(y, &[x, gamma, beta], move |gy, acc| {
            let (gx, dg, db) = batch_norm_backward(gy, gv.data(), &stats);
            acc.add(xn, gx);
            acc.add(gn, Tensor::from_vec(pshape, dg).expect("channel count"));
            acc.add(bn, Tensor::from_vec(pshape, db).expect("channel count"));
        }))
    }

    /// Fully connected layer over the flattened item. `w` is `(out, in, 1, 1, 1)`,
    /// `b` is `(1, out, 1, 1, 1)`; the output is `(n, out, 1, 1, 1)`.
    pub fn linear(&self, x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let xs = x.shape();
        let ws = w.shape();
        let (fin, fout) = (xs.item(), ws.n);
        if ws.item() != fin {
            return Err(NnError::ShapeMismatch {
                op: "linear",
                expected: format!("{fin} input features"),
                actual: format!("{} weight columns", ws.item()),
            });
        }
        b.value().expect_shape("linear bias", Shape::new(1, fout, 1, 1, 1))?;
        let mut y = Tensor::zeros(Shape::new(xs.n, fout, 1, 1, 1));
        for (row, bias) in y.data_mut().chunks_mut(fout).zip(std::iter::repeat(b.value().data())) {
            row.copy_from_slice(bias);
        }
        T::gemm(xs.n, fin, fout, T::one(), x.value().data(), (fin, 1), w.value().data(), (1, fin), T::one(), y.data_mut(), (fout, 1));
        let (xv, wv) = (Arc::clone(&x.value), Arc::clone(&w.value));
        let (xn, wn, bn) = (x.node, w.node, b.node);
        Ok(self.output(y, &[x, w, b], move |gy, acc| {
            let n = xs.n;
            if xn.is_some() {
                let mut gx = Tensor::zeros(xs);
                T::gemm(n, fout, fin, T::one(), gy.data(), (fout, 1), wv.data(), (fin, 1), T::zero(), gx.data_mut(), (fin, 1));
                acc.add(xn, gx);
            }
            if wn.is_some() {
                let mut gw = Tensor::zeros(ws);
                T::gemm(fout, n, fin, T::one(), gy.data(), (1, fout), xv.data(), (fin, 1), T::zero(), gw.data_mut(), (fin, 1));
                acc.add(wn, gw);
            }
            let mut gb = Tensor::zeros(Shape::new(1, fout, 1, 1, 1));
            for row in gy.data().chunks(fout) {
                for (a, &g) in gb.data_mut().iter_mut().zip(row) {
                    *a += g;
                }
            }
            acc.add(bn, gb);
        }))
    }

    /// Run reverse accumulation from the seeded outputs.
    pub fn backward(self, seeds: Vec<(&Var<T>, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut nodes = self.nodes.into_inner();
        let mut acc = Accum {
            grads: (0..nodes.len()).map(|_| None).collect(),
        };
        for (var, g) in seeds {
            g.expect_shape("backward seed", var.shape())?;
            acc.add(var.node, g);
        }
        let mut out = Gradients {
            params: (0..self.params.len()).map(|_| None).collect(),
            leaves: HashMap::new(),
        };
        for i in (0..nodes.len()).rev() {
            let Some(g) = acc.grads[i].take() else {
                continue;
            };
            match &mut nodes[i] {
                NodeKind::Leaf => {
                    out.leaves.insert(i, g);
                }
                NodeKind::Param(id) => match &mut out.params[id.0] {
                    Some(t) => t.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                },
                NodeKind::Op(f) => {
                    if let Some(f) = f.take() {
                        f(&g, &mut acc);
                    }
                }
            }
            nodes[i] = NodeKind::Leaf;
        }
        Ok(out)
    }
}
