//! Minimal tape-based reverse-mode automatic differentiation over dense
//! tensors, with the operator set the post-filter network needs.
//!
//! A [`Tape`] records every operation as a node whose parents are earlier
//! nodes, so the graph is acyclic by construction. [`Tape::backward`] walks
//! the nodes in reverse once; a tape cannot be differentiated twice.

mod conv;
mod elementwise;
mod lstm;
mod norm;
pub mod optim;
pub mod params;
mod scalar;
mod shape;
mod tensor;

pub use conv::ConvSpec;
pub use lstm::{LstmState, LstmWeights};
pub use optim::Adam;
pub use params::{load_checkpoint, save_checkpoint, BoundParams, ModelParams};
pub use scalar::Scalar;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Prelu {
        x: Var,
        alpha: Var,
    },
    CMagPow {
        re: Var,
        im: Var,
        p: T,
    },
    CCompress {
        re: Var,
        im: Var,
        c: T,
        imag: bool,
    },
    Bce {
        p: Var,
        target: Vec<T>,
    },
    SumAll(Var),
    MeanAll(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Pad {
        x: Var,
        pads: Vec<(usize, usize)>,
    },
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        axes: Vec<usize>,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
}

pub(crate) struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation graph.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    /// Reverse pass from a scalar (single-element) output.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Graph(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(grads, nodes, *a, g);
                add_into(grads, nodes, *b, g);
            }
            Op::Sub(a, b) => {
                add_into(grads, nodes, *a, g);
                if let Some(buf) = grad_buf(grads, nodes, *b) {
                    for (d, &v) in buf.iter_mut().zip(g) {
                        *d -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(buf) = grad_buf(grads, nodes, *a) {
                    for ((d, &gv), &bv) in buf.iter_mut().zip(g).zip(vb) {
                        *d += gv * bv;
                    }
                }
                if let Some(buf) = grad_buf(grads, nodes, *b) {
                    for ((d, &gv), &av) in buf.iter_mut().zip(g).zip(va) {
                        *d += gv * av;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(buf) = grad_buf(grads, nodes, *a) {
                    for (d, &gv) in buf.iter_mut().zip(g) {
                        *d += gv * *s;
                    }
                }
            }
            Op::AddScalar(a) => add_into(grads, nodes, *a, g),
            Op::Reshape(a) => add_into(grads, nodes, *a, g),
            Op::Sigmoid(a) => {
                if let Some(buf) = grad_buf(grads, nodes, *a) {
                    for ((d, &gv), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                        *d += gv * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(buf) = grad_buf(grads, nodes, *a) {
                    for ((d, &gv), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                        *d += gv * (T::one() - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                let x = nodes[a.0].value.data();
                if let Some(buf) = grad_buf(grads, nodes, *a) {
                    for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(x) {
                        if xv > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Prelu { x, alpha } => elementwise::prelu_backward(nodes, grads, *x, *alpha, g),
            Op::CMagPow { re, im, p } => elementwise::cmag_pow_backward(nodes, grads, *re, *im, *p, g),
            Op::CCompress { re, im, c, imag } => {
                elementwise::ccompress_backward(nodes, grads, *re, *im, *c, *imag, g)
            }
            Op::Bce { p, target } => elementwise::bce_backward(nodes, grads, *p, target, g[0]),
            Op::SumAll(a) => {
                if let Some(buf) = grad_buf(grads, nodes, *a) {
                    for d in buf.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::MeanAll(a) => {
                if let Some(buf) = grad_buf(grads, nodes, *a) {
                    let s = g[0] / T::from_usize(buf.len()).expect("size");
                    for d in buf.iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::MeanAxis { x, axis } => shape::mean_axis_backward(nodes, grads, *x, *axis, g),
            Op::Concat { inputs, axis } => shape::concat_backward(nodes, grads, inputs, *axis, g),
            Op::Slice { x, axis, start } => {
                shape::slice_backward(nodes, grads, *x, *axis, *start, out.shape(), g)
            }
            Op::Permute { x, perm } => shape::permute_backward(nodes, grads, *x, perm, g),
            Op::Pad { x, pads } => shape::pad_backward(nodes, grads, *x, pads, g),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axes,
                mean,
                rstd,
            } => norm::layer_norm_backward(nodes, grads, *x, *gamma, *beta, axes, mean, rstd, g),
            Op::Conv2d { x, w, b, spec } => conv::conv2d_backward(nodes, grads, *x, *w, *b, spec, g),
            Op::ConvTranspose2d { x, w, b, spec } => {
                conv::conv_transpose2d_backward(nodes, grads, *x, *w, *b, spec, g)
            }
            Op::Linear { x, w, b } => conv::linear_backward(nodes, grads, *x, *w, *b, g),
        }
    }
}

/// Gradient buffer of `v`, created on first use; `None` for constants.
pub(crate) fn grad_buf<'a, T: Scalar>(
    grads: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
}

pub(crate) fn add_into<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, g: &[T]) {
    if let Some(buf) = grad_buf(grads, nodes, v) {
        for (d, &gv) in buf.iter_mut().zip(g) {
            *d += gv;
        }
    }
}
