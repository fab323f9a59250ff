//! 2-D convolution, its transpose, and dense layers.
//!
//! Layouts: inputs `[B, C, H, W]` (H = time, W = frequency), conv weights
//! `[C_out, C_in/groups, KH, KW]`, transposed-conv weights
//! `[C_in, C_out, KH, KW]`. Padding is `[top, bottom, left, right]`; for the
//! transposed convolution it crops the output, so `conv_transpose2d` with a
//! given spec is the exact adjoint of `conv2d` with the same spec.

use super::scalar::{gemm, Layout};
use super::{grad_buf, Node, Op, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    /// `[top, bottom, left, right]`.
    pub padding: [usize; 4],
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            dilation: (1, 1),
            padding: [0; 4],
            groups: 1,
        }
    }
}

impl ConvSpec {
    pub fn with_stride(mut self, t: usize, f: usize) -> Self {
        self.stride = (t, f);
        self
    }

    pub fn with_dilation(mut self, t: usize, f: usize) -> Self {
        self.dilation = (t, f);
        self
    }

    pub fn with_padding(mut self, padding: [usize; 4]) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Output extent of a convolution along one axis, if positive.
    fn conv_out(&self, len: usize, k: usize, axis: usize) -> Option<usize> {
        let (s, d, pad) = if axis == 0 {
            (self.stride.0, self.dilation.0, self.padding[0] + self.padding[1])
        } else {
            (self.stride.1, self.dilation.1, self.padding[2] + self.padding[3])
        };
        let span = d * (k - 1) + 1;
        (len + pad >= span).then(|| (len + pad - span) / s + 1)
    }

    /// Output extent of the transposed convolution along one axis.
    fn transpose_out(&self, len: usize, k: usize, axis: usize) -> Option<usize> {
        let (s, d, pad) = if axis == 0 {
            (self.stride.0, self.dilation.0, self.padding[0] + self.padding[1])
        } else {
            (self.stride.1, self.dilation.1, self.padding[2] + self.padding[3])
        };
        let full = (len - 1) * s + d * (k - 1) + 1;
        (full > pad && len > 0).then(|| full - pad)
    }
}

/// Geometry of one image-to-column transform.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
}

/// `cols[(c·KH + i)·KW + j, oh·OW + ow] = x[c, oh·sh + i·dh − top, ow·sw + j·dw − left]`.
fn im2col<T: Scalar>(x: &[T], geo: &Geometry, spec: &ConvSpec, cols: &mut [T]) {
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (top, left) = (spec.padding[0] as isize, spec.padding[2] as isize);
    let ncol = geo.out_h * geo.out_w;
    for c in 0..geo.channels {
        for i in 0..geo.kh {
            for j in 0..geo.kw {
                let row = ((c * geo.kh + i) * geo.kw + j) * ncol;
                for oh in 0..geo.out_h {
                    let ih = (oh * sh + i * dh) as isize - top;
                    let dst = &mut cols[row + oh * geo.out_w..row + (oh + 1) * geo.out_w];
                    if ih < 0 || ih >= geo.in_h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * geo.in_h + ih as usize) * geo.in_w..][..geo.in_w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * sw + j * dw) as isize - left;
                        *d = if iw < 0 || iw >= geo.in_w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into the image.
fn col2im<T: Scalar>(cols: &[T], geo: &Geometry, spec: &ConvSpec, x: &mut [T]) {
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (top, left) = (spec.padding[0] as isize, spec.padding[2] as isize);
    let ncol = geo.out_h * geo.out_w;
    for c in 0..geo.channels {
        for i in 0..geo.kh {
            for j in 0..geo.kw {
                let row = ((c * geo.kh + i) * geo.kw + j) * ncol;
                for oh in 0..geo.out_h {
                    let ih = (oh * sh + i * dh) as isize - top;
                    if ih < 0 || ih >= geo.in_h as isize {
                        continue;
                    }
                    let src = &cols[row + oh * geo.out_w..row + (oh + 1) * geo.out_w];
                    let dst = &mut x[(c * geo.in_h + ih as usize) * geo.in_w..][..geo.in_w];
                    for (ow, &v) in src.iter().enumerate() {
                        let iw = (ow * sw + j * dw) as isize - left;
                        if iw >= 0 && iw < geo.in_w as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// 1×1 kernel, unit stride, no padding: the image is its own column matrix.
fn is_pointwise(geo: &Geometry, spec: &ConvSpec) -> bool {
    geo.kh == 1 && geo.kw == 1 && spec.stride == (1, 1) && spec.padding == [0; 4]
}

fn check_rank4(shape: &[usize], what: &str) -> Result<()> {
    if shape.len() != 4 {
        return Err(Error::Shape(format!("{what} must be rank 4, got {shape:?}")));
    }
    Ok(())
}

struct ConvDims {
    batch: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

fn conv_dims(xs: &[usize], ws: &[usize], spec: &ConvSpec) -> Result<ConvDims> {
    check_rank4(xs, "conv2d input")?;
    check_rank4(ws, "conv2d weight")?;
    let g = spec.groups;
    if g == 0 || xs[1] % g != 0 || ws[0] % g != 0 || ws[1] * g != xs[1] {
        return Err(Error::Shape(format!(
            "conv2d: input {xs:?}, weight {ws:?}, groups {g}"
        )));
    }
    let out_h = spec.conv_out(xs[2], ws[2], 0);
    let out_w = spec.conv_out(xs[3], ws[3], 1);
    let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
        return Err(Error::Shape(format!("conv2d: kernel {ws:?} larger than padded input {xs:?}")));
    };
    Ok(ConvDims {
        batch: xs[0],
        cin: xs[1],
        cout: ws[0],
        kh: ws[2],
        kw: ws[3],
        in_h: xs[2],
        in_w: xs[3],
        out_h,
        out_w,
    })
}

fn check_bias<T: Scalar>(tape: &Tape<T>, b: Option<Var>, n: usize) -> Result<()> {
    if let Some(b) = b {
        if tape.value(b).numel() != n {
            return Err(Error::Shape(format!(
                "bias of {} values for {n} channels",
                tape.value(b).numel()
            )));
        }
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation with stride, dilation, explicit zero padding and
    /// channel groups.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let d = conv_dims(self.shape(x), self.shape(w), &spec)?;
        check_bias(self, b, d.cout)?;
        let g = spec.groups;
        let (cin_g, cout_g) = (d.cin / g, d.cout / g);
        let geo = Geometry {
            channels: cin_g,
            in_h: d.in_h,
            in_w: d.in_w,
            kh: d.kh,
            kw: d.kw,
            out_h: d.out_h,
            out_w: d.out_w,
        };
        let k = cin_g * d.kh * d.kw;
        let n = d.out_h * d.out_w;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); d.batch * d.cout * n];
        let mut cols = Vec::new();
        for bi in 0..d.batch {
            for gi in 0..g {
                let xs = &xv[(bi * d.cin + gi * cin_g) * d.in_h * d.in_w..][..cin_g * d.in_h * d.in_w];
                let os = &mut out[(bi * d.cout + gi * cout_g) * n..][..cout_g * n];
                if cin_g == 1 && cout_g == 1 {
                    direct_single(xs, &wv[gi * k..(gi + 1) * k], &geo, &spec, os);
                    continue;
                }
                let ws = &wv[gi * cout_g * k..(gi + 1) * cout_g * k];
                let cols = if is_pointwise(&geo, &spec) {
                    xs
                } else {
                    cols.resize(k * n, T::zero());
                    im2col(xs, &geo, &spec, &mut cols);
                    &cols
                };
                gemm(cout_g, k, n, ws, Layout::row_major(k), cols, Layout::row_major(n), T::zero(), os, Layout::row_major(n));
            }
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), d.batch, d.cout, n);
        }
        let t = Tensor::new(&[d.batch, d.cout, d.out_h, d.out_w], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, spec }, &parents))
    }

    /// Transposed convolution, the adjoint of [`Tape::conv2d`] for the same
    /// spec (groups must be 1). Padding crops the output.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        check_rank4(&xs, "conv_transpose2d input")?;
        check_rank4(&ws, "conv_transpose2d weight")?;
        if spec.groups != 1 || ws[0] != xs[1] {
            return Err(Error::Shape(format!(
                "conv_transpose2d: input {xs:?}, weight {ws:?}"
            )));
        }
        let (Some(out_h), Some(out_w)) = (spec.transpose_out(xs[2], ws[2], 0), spec.transpose_out(xs[3], ws[3], 1)) else {
            return Err(Error::Shape(format!("conv_transpose2d: padding crops everything for {xs:?}")));
        };
        let (batch, cin, cout) = (xs[0], xs[1], ws[1]);
        check_bias(self, b, cout)?;
        let geo = Geometry {
            channels: cout,
            in_h: out_h,
            in_w: out_w,
            kh: ws[2],
            kw: ws[3],
            out_h: xs[2],
            out_w: xs[3],
        };
        let k = cout * ws[2] * ws[3];
        let n = xs[2] * xs[3];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); batch * cout * out_h * out_w];
        let mut cols = vec![T::zero(); k * n];
        for bi in 0..batch {
            let xs_b = &xv[bi * cin * n..(bi + 1) * cin * n];
            gemm(k, cin, n, wv, Layout::transposed(k), xs_b, Layout::row_major(n), T::zero(), &mut cols, Layout::row_major(n));
            col2im(&cols, &geo, &spec, &mut out[bi * cout * out_h * out_w..(bi + 1) * cout * out_h * out_w]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), batch, cout, out_h * out_w);
        }
        let t = Tensor::new(&[batch, cout, out_h, out_w], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(t, Op::ConvTranspose2d { x, w, b, spec }, &parents))
    }

    /// Dense layer over the last axis: `y = x·Wᵀ + b`, `W: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || ws[1] != *xs.last().expect("non-empty") {
            return Err(Error::Shape(format!("linear: input {xs:?}, weight {ws:?}")));
        }
        let (out_f, in_f) = (ws[0], ws[1]);
        check_bias(self, b, out_f)?;
        let rows = self.value(x).numel() / in_f.max(1);
        let mut out = vec![T::zero(); rows * out_f];
        gemm(
            rows,
            in_f,
            out_f,
            self.value(x).data(),
            Layout::row_major(in_f),
            self.value(w).data(),
            Layout::transposed(in_f),
            T::zero(),
            &mut out,
            Layout::row_major(out_f),
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(out_f) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().expect("non-empty") = out_f;
        let t = Tensor::new(&shape, out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(t, Op::Linear { x, w, b }, &parents))
    }
}

/// Output positions `ow` whose input column `ow·s + off` lies in `0..len`.
fn valid_range(out_len: usize, s: usize, off: isize, len: usize) -> std::ops::Range<usize> {
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
    let hi = if (len as isize) <= off {
        0
    } else {
        ((len as isize - off - 1) as usize / s + 1).min(out_len)
    };
    lo..hi.max(lo)
}

/// Single input channel to single output channel (depthwise) convolution.
fn direct_single<T: Scalar>(x: &[T], w: &[T], geo: &Geometry, spec: &ConvSpec, out: &mut [T]) {
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (top, left) = (spec.padding[0] as isize, spec.padding[2] as isize);
    for i in 0..geo.kh {
        for j in 0..geo.kw {
            let wv = w[i * geo.kw + j];
            let off = (j * dw) as isize - left;
            let cols = valid_range(geo.out_w, sw, off, geo.in_w);
            for oh in 0..geo.out_h {
                let ih = (oh * sh + i * dh) as isize - top;
                if ih < 0 || ih >= geo.in_h as isize {
                    continue;
                }
                let src = &x[ih as usize * geo.in_w..][..geo.in_w];
                let dst = &mut out[oh * geo.out_w..(oh + 1) * geo.out_w];
                if sw == 1 {
                    let s0 = (cols.start as isize + off) as usize;
                    for (d, &v) in dst[cols.clone()].iter_mut().zip(&src[s0..]) {
                        *d += wv * v;
                    }
                } else {
                    for ow in cols.clone() {
                        dst[ow] += wv * src[(ow as isize * sw as isize + off) as usize];
                    }
                }
            }
        }
    }
}

/// Backward of [`direct_single`]: accumulates into `dx` and `dw`.
fn direct_single_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &[T],
    geo: &Geometry,
    spec: &ConvSpec,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (sh, sw) = spec.stride;
    let (dh, dwl) = spec.dilation;
    let (top, left) = (spec.padding[0] as isize, spec.padding[2] as isize);
    for i in 0..geo.kh {
        for j in 0..geo.kw {
            let wv = w[i * geo.kw + j];
            let off = (j * dwl) as isize - left;
            let cols = valid_range(geo.out_w, sw, off, geo.in_w);
            let mut acc = T::zero();
            for oh in 0..geo.out_h {
                let ih = (oh * sh + i * dh) as isize - top;
                if ih < 0 || ih >= geo.in_h as isize {
                    continue;
                }
                let row = ih as usize * geo.in_w;
                let gs = &g[oh * geo.out_w..(oh + 1) * geo.out_w];
                for ow in cols.clone() {
                    let idx = row + (ow as isize * sw as isize + off) as usize;
                    acc += gs[ow] * x[idx];
                    if let Some(dx) = dx.as_deref_mut() {
                        dx[idx] += gs[ow] * wv;
                    }
                }
            }
            if let Some(dw) = dw.as_deref_mut() {
                dw[i * geo.kw + j] += acc;
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], batch: usize, chans: usize, n: usize) {
    for bi in 0..batch {
        for (c, &bv) in bias.iter().enumerate().take(chans) {
            for v in &mut out[(bi * chans + c) * n..(bi * chans + c + 1) * n] {
                *v += bv;
            }
        }
    }
}

fn bias_grad<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], b: Option<Var>, g: &[T], batch: usize, chans: usize, n: usize) {
    if let Some(b) = b {
        if let Some(buf) = grad_buf(grads, nodes, b) {
            for bi in 0..batch {
                for (c, d) in buf.iter_mut().enumerate().take(chans) {
                    *d += g[(bi * chans + c) * n..(bi * chans + c + 1) * n].iter().copied().sum::<T>();
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    w: Var,
    b: Option<Var>,
    spec: &ConvSpec,
    g: &[T],
) {
    let d = conv_dims(nodes[x.0].value.shape(), nodes[w.0].value.shape(), spec).expect("validated in forward");
    let groups = spec.groups;
    let (cin_g, cout_g) = (d.cin / groups, d.cout / groups);
    let geo = Geometry {
        channels: cin_g,
        in_h: d.in_h,
        in_w: d.in_w,
        kh: d.kh,
        kw: d.kw,
        out_h: d.out_h,
        out_w: d.out_w,
    };
    let k = cin_g * d.kh * d.kw;
    let n = d.out_h * d.out_w;
    let img = d.in_h * d.in_w;
    let xv = nodes[x.0].value.data();
    let wv = nodes[w.0].value.data();
    bias_grad(grads, nodes, b, g, d.batch, d.cout, n);

    let want_x = nodes[x.0].requires_grad;
    let want_w = nodes[w.0].requires_grad;
    let mut dx = want_x.then(|| grads[x.0].take().unwrap_or_else(|| vec![T::zero(); xv.len()]));
    let mut dw = want_w.then(|| grads[w.0].take().unwrap_or_else(|| vec![T::zero(); wv.len()]));
    let mut cols = Vec::new();
    for bi in 0..d.batch {
        for gi in 0..groups {
            let xoff = (bi * d.cin + gi * cin_g) * img;
            let xs = &xv[xoff..xoff + cin_g * img];
            let gs = &g[(bi * d.cout + gi * cout_g) * n..][..cout_g * n];
            let ws = &wv[gi * cout_g * k..(gi + 1) * cout_g * k];
            if cin_g == 1 && cout_g == 1 {
                direct_single_backward(
                    xs,
                    ws,
                    gs,
                    &geo,
                    spec,
                    dx.as_deref_mut().map(|v| &mut v[xoff..xoff + img]),
                    dw.as_deref_mut().map(|v| &mut v[gi * k..(gi + 1) * k]),
                );
                continue;
            }
            let pointwise = is_pointwise(&geo, spec);
            if let Some(dw) = dw.as_deref_mut() {
                let cols = if pointwise {
                    xs
                } else {
                    cols.resize(k * n, T::zero());
                    im2col(xs, &geo, spec, &mut cols);
                    &cols
                };
                gemm(cout_g, n, k, gs, Layout::row_major(n), cols, Layout::transposed(n), T::one(), &mut dw[gi * cout_g * k..(gi + 1) * cout_g * k], Layout::row_major(k));
            }
            if let Some(dx) = dx.as_deref_mut() {
                let dxs = &mut dx[xoff..xoff + cin_g * img];
                if pointwise {
                    gemm(k, cout_g, n, ws, Layout::transposed(k), gs, Layout::row_major(n), T::one(), dxs, Layout::row_major(n));
                } else {
                    cols.resize(k * n, T::zero());
                    gemm(k, cout_g, n, ws, Layout::transposed(k), gs, Layout::row_major(n), T::zero(), &mut cols, Layout::row_major(n));
                    col2im(&cols, &geo, spec, dxs);
                }
            }
        }
    }
    if let Some(dx) = dx {
        grads[x.0] = Some(dx);
    }
    if let Some(dw) = dw {
        grads[w.0] = Some(dw);
    }
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    w: Var,
    b: Option<Var>,
    spec: &ConvSpec,
    g: &[T],
) {
    let xs = nodes[x.0].value.shape();
    let ws = nodes[w.0].value.shape();
    let (batch, cin, cout) = (xs[0], xs[1], ws[1]);
    let out_h = spec.transpose_out(xs[2], ws[2], 0).expect("validated");
    let out_w = spec.transpose_out(xs[3], ws[3], 1).expect("validated");
    let geo = Geometry {
        channels: cout,
        in_h: out_h,
        in_w: out_w,
        kh: ws[2],
        kw: ws[3],
        out_h: xs[2],
        out_w: xs[3],
    };
    let k = cout * ws[2] * ws[3];
    let n = xs[2] * xs[3];
    let img = out_h * out_w;
    let xv = nodes[x.0].value.data();
    let wv = nodes[w.0].value.data();
    bias_grad(grads, nodes, b, g, batch, cout, img);

    let want_x = nodes[x.0].requires_grad;
    let want_w = nodes[w.0].requires_grad;
    if !want_x && !want_w {
        return;
    }
    let mut dx = want_x.then(|| grads[x.0].take().unwrap_or_else(|| vec![T::zero(); xv.len()]));
    let mut dw = want_w.then(|| grads[w.0].take().unwrap_or_else(|| vec![T::zero(); wv.len()]));
    let mut cols = vec![T::zero(); k * n];
    for bi in 0..batch {
        im2col(&g[bi * cout * img..(bi + 1) * cout * img], &geo, spec, &mut cols);
        if let Some(dx) = dx.as_deref_mut() {
            gemm(cin, k, n, wv, Layout::row_major(k), &cols, Layout::row_major(n), T::one(), &mut dx[bi * cin * n..(bi + 1) * cin * n], Layout::row_major(n));
        }
        if let Some(dw) = dw.as_deref_mut() {
            gemm(cin, n, k, &xv[bi * cin * n..(bi + 1) * cin * n], Layout::row_major(n), &cols, Layout::transposed(n), T::one(), dw, Layout::row_major(k));
        }
    }
    if let Some(dx) = dx {
        grads[x.0] = Some(dx);
    }
    if let Some(dw) = dw {
        grads[w.0] = Some(dw);
    }
}

pub(crate) fn linear_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
) {
    let ws = nodes[w.0].value.shape();
    let (out_f, in_f) = (ws[0], ws[1]);
    let xv = nodes[x.0].value.data();
    let wv = nodes[w.0].value.data();
    let rows = xv.len() / in_f.max(1);
    if let Some(b) = b {
        if let Some(buf) = grad_buf(grads, nodes, b) {
            for row in g.chunks(out_f) {
                for (d, &gv) in buf.iter_mut().zip(row) {
                    *d += gv;
                }
            }
        }
    }
    if let Some(buf) = grad_buf(grads, nodes, x) {
        gemm(rows, out_f, in_f, g, Layout::row_major(out_f), wv, Layout::row_major(in_f), T::one(), buf, Layout::row_major(in_f));
    }
    if let Some(buf) = grad_buf(grads, nodes, w) {
        gemm(out_f, rows, in_f, g, Layout::transposed(out_f), xv, Layout::row_major(in_f), T::one(), buf, Layout::row_major(in_f));
    }
}
