use super::tensor::{split_axis, strides};
use super::{grad_buf, Node, Op, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "slice {start}..{} on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * n + start) * inner;
            data.extend_from_slice(&src[off..off + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(t, Op::Slice { x, axis, start }, &[x]))
    }

    /// Split into pieces of the given sizes along `axis`.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        if axis >= self.shape(x).len() || total != self.shape(x)[axis] {
            return Err(Error::Shape(format!(
                "split sizes {sizes:?} do not cover axis {axis} of {:?}",
                self.shape(x)
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(x, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!("bad permutation {perm:?} for {shape:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(self.value(x).data(), &shape, perm);
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            t,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    /// Zero padding `(before, after)` per axis.
    pub fn pad(&mut self, x: Var, pads: &[(usize, usize)]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if pads.len() != shape.len() {
            return Err(Error::Shape(format!("pad spec {pads:?} for {shape:?}")));
        }
        let out_shape: Vec<usize> = shape.iter().zip(pads).map(|(s, p)| s + p.0 + p.1).collect();
        let mut data = vec![T::zero(); out_shape.iter().product()];
        let src = self.value(x).data();
        for_each_padded(&shape, &out_shape, pads, |si, di| data[di] = src[si]);
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            t,
            Op::Pad {
                x,
                pads: pads.to_vec(),
            },
            &[x],
        ))
    }

    /// Mean over one axis, which is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::Shape(format!("mean over axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let inv = T::one() / T::from_usize(n).expect("size");
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let off = (o * n + k) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[off + i];
                }
            }
        }
        for v in data.iter_mut() {
            *v *= inv;
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(t, Op::MeanAxis { x, axis }, &[x]))
    }
}

pub(crate) fn permute_data<T: Scalar>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let rank = shape.len();
    if rank == 0 {
        out.push(src[0]);
        return out;
    }
    // Odometer over the leading output axes; the innermost one is a strided
    // (or contiguous) copy.
    let last = rank - 1;
    let (len, inner_step) = (out_shape[last], step[last]);
    let mut idx = vec![0usize; last];
    let mut off = 0usize;
    while out.len() < n {
        if inner_step == 1 {
            out.extend_from_slice(&src[off..off + len]);
        } else {
            out.extend((0..len).map(|k| src[off + k * inner_step]));
        }
        for ax in (0..last).rev() {
            idx[ax] += 1;
            off += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= step[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Visit `(source index, padded index)` pairs for every source element.
fn for_each_padded(shape: &[usize], out_shape: &[usize], pads: &[(usize, usize)], mut f: impl FnMut(usize, usize)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    let out_strides = strides(out_shape);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let base: usize = pads.iter().zip(&out_strides).map(|(p, s)| p.0 * s).sum();
    let mut off = base;
    for si in 0..n {
        f(si, off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += out_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= out_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn mean_axis_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    axis: usize,
    g: &[T],
) {
    let (outer, n, inner) = split_axis(nodes[x.0].value.shape(), axis);
    let inv = T::one() / T::from_usize(n).expect("size");
    if let Some(buf) = grad_buf(grads, nodes, x) {
        for o in 0..outer {
            for k in 0..n {
                let off = (o * n + k) * inner;
                for i in 0..inner {
                    buf[off + i] += g[o * inner + i] * inv;
                }
            }
        }
    }
}

pub(crate) fn concat_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    inputs: &[Var],
    axis: usize,
    g: &[T],
) {
    let shape0 = nodes[inputs[0].0].value.shape();
    let outer: usize = shape0[..axis].iter().product();
    let inner: usize = shape0[axis + 1..].iter().product();
    let total: usize = inputs.iter().map(|v| nodes[v.0].value.shape()[axis]).sum();
    let mut start = 0;
    for &v in inputs {
        let n = nodes[v.0].value.shape()[axis];
        if let Some(buf) = grad_buf(grads, nodes, v) {
            for o in 0..outer {
                let src = (o * total + start) * inner;
                let dst = o * n * inner;
                for i in 0..n * inner {
                    buf[dst + i] += g[src + i];
                }
            }
        }
        start += n;
    }
}

pub(crate) fn slice_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    axis: usize,
    start: usize,
    out_shape: &[usize],
    g: &[T],
) {
    let (outer, n, inner) = split_axis(nodes[x.0].value.shape(), axis);
    let len = out_shape[axis];
    if let Some(buf) = grad_buf(grads, nodes, x) {
        for o in 0..outer {
            let dst = (o * n + start) * inner;
            let src = o * len * inner;
            for i in 0..len * inner {
                buf[dst + i] += g[src + i];
            }
        }
    }
}

pub(crate) fn permute_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    perm: &[usize],
    g: &[T],
) {
    let in_shape = nodes[x.0].value.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let back = permute_data(g, &out_shape, &inverse);
    super::add_into(grads, nodes, x, &back);
}

pub(crate) fn pad_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    pads: &[(usize, usize)],
    g: &[T],
) {
    let shape = nodes[x.0].value.shape().to_vec();
    let out_shape: Vec<usize> = shape.iter().zip(pads).map(|(s, p)| s + p.0 + p.1).collect();
    if let Some(buf) = grad_buf(grads, nodes, x) {
        for_each_padded(&shape, &out_shape, pads, |si, di| buf[si] += g[di]);
    }
}
