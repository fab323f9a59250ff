use super::{grad_buf, Node, Op, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-8;

/// Calls `f(flat, group, param, len, last_normalized)` for every run of
/// `len` elements along the innermost axis. Within a run the flat index
/// advances by one and, depending on whether the innermost axis is
/// normalized, either the param or the group index advances by one.
fn for_each_row(shape: &[usize], normalized: &[bool], mut f: impl FnMut(usize, usize, usize, usize, bool)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, 0, 0, 1, false);
        return;
    }
    let mut gs = vec![0usize; rank];
    let mut ps = vec![0usize; rank];
    let (mut gacc, mut pacc) = (1, 1);
    for ax in (0..rank).rev() {
        if normalized[ax] {
            ps[ax] = pacc;
            pacc *= shape[ax];
        } else {
            gs[ax] = gacc;
            gacc *= shape[ax];
        }
    }
    let last = rank - 1;
    let len = shape[last];
    let mut idx = vec![0usize; last];
    let (mut g, mut p) = (0usize, 0usize);
    let mut flat = 0;
    while flat < n {
        f(flat, g, p, len, normalized[last]);
        flat += len;
        for ax in (0..last).rev() {
            idx[ax] += 1;
            g += gs[ax];
            p += ps[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            g -= gs[ax] * idx[ax];
            p -= ps[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

fn norm_layout(shape: &[usize], axes: &[usize]) -> Result<(Vec<bool>, usize, usize)> {
    let mut mask = vec![false; shape.len()];
    for &a in axes {
        if a >= shape.len() || mask[a] {
            return Err(Error::Shape(format!("layer_norm axes {axes:?} for {shape:?}")));
        }
        mask[a] = true;
    }
    let group_size: usize = axes.iter().map(|&a| shape[a]).product();
    let groups = shape.iter().product::<usize>() / group_size.max(1);
    Ok((mask, groups, group_size))
}

impl<T: Scalar> Tape<T> {
    /// Normalize to zero mean and unit variance over `axes`, then apply an
    /// optional affine transform whose parameters span those axes.
    pub fn layer_norm(&mut self, x: Var, axes: &[usize], gamma: Option<Var>, beta: Option<Var>) -> Result<Var> {
        self.layer_norm_eps(x, axes, gamma, beta, LN_EPS)
    }

    /// [`Tape::layer_norm`] with an explicit variance floor.
    pub fn layer_norm_eps(
        &mut self,
        x: Var,
        axes: &[usize],
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (mask, groups, group_size) = norm_layout(&shape, axes)?;
        for p in [gamma, beta].into_iter().flatten() {
            if self.value(p).numel() != group_size {
                return Err(Error::Shape(format!(
                    "layer_norm affine of {} values for {group_size}-element groups",
                    self.value(p).numel()
                )));
            }
        }
        let xv = self.value(x).data();
        let inv_n = T::one() / T::from_usize(group_size).expect("size");
        let mut mean = vec![T::zero(); groups];
        for_each_row(&shape, &mask, |i, g, _, len, last_normalized| {
            let row = &xv[i..i + len];
            if last_normalized {
                mean[g] += row.iter().copied().sum::<T>();
            } else {
                for (m, &v) in mean[g..g + len].iter_mut().zip(row) {
                    *m += v;
                }
            }
        });
        for m in mean.iter_mut() {
            *m *= inv_n;
        }
        let mut var = vec![T::zero(); groups];
        for_each_row(&shape, &mask, |i, g, _, len, last_normalized| {
            let row = &xv[i..i + len];
            if last_normalized {
                let m = mean[g];
                var[g] += row.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
            } else {
                for ((acc, &m), &v) in var[g..g + len].iter_mut().zip(&mean[g..g + len]).zip(row) {
                    *acc += (v - m) * (v - m);
                }
            }
        });
        let eps = T::lit(eps);
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v * inv_n + eps).sqrt()).collect();
        let gv = gamma.map(|g| self.value(g).data());
        let bv = beta.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); xv.len()];
        for_each_row(&shape, &mask, |i, g, p, len, last_normalized| {
            let (src, dst) = (&xv[i..i + len], &mut out[i..i + len]);
            if last_normalized {
                let (m, r) = (mean[g], rstd[g]);
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = (v - m) * r;
                }
                if let Some(gv) = gv {
                    for (o, &s) in dst.iter_mut().zip(&gv[p..p + len]) {
                        *o *= s;
                    }
                }
                if let Some(bv) = bv {
                    for (o, &s) in dst.iter_mut().zip(&bv[p..p + len]) {
                        *o += s;
                    }
                }
            } else {
                let (scale, shift) = (gv.map_or(T::one(), |gv| gv[p]), bv.map_or(T::zero(), |bv| bv[p]));
                for (((o, &v), &m), &r) in dst.iter_mut().zip(src).zip(&mean[g..g + len]).zip(&rstd[g..g + len]) {
                    *o = (v - m) * r * scale + shift;
                }
            }
        });
        let t = Tensor::new(&shape, out)?;
        let mut parents = vec![x];
        parents.extend(gamma);
        parents.extend(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axes: axes.to_vec(),
                mean,
                rstd,
            },
            &parents,
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    gamma: Option<Var>,
    beta: Option<Var>,
    axes: &[usize],
    mean: &[T],
    rstd: &[T],
    g: &[T],
) {
    let shape = nodes[x.0].value.shape();
    let (mask, groups, group_size) = norm_layout(shape, axes).expect("validated in forward");
    let xv = nodes[x.0].value.data();
    let gv = gamma.map(|v| nodes[v.0].value.data());

    let elems = |f: &mut dyn FnMut(usize, usize, usize)| {
        for_each_row(shape, &mask, |i, g, p, len, last_normalized| {
            let (gl, pl) = if last_normalized { (0, 1) } else { (1, 0) };
            for k in 0..len {
                f(i + k, g + k * gl, p + k * pl);
            }
        })
    };
    if let Some(b) = beta {
        if let Some(buf) = grad_buf(grads, nodes, b) {
            elems(&mut |i, _, p| buf[p] += g[i]);
        }
    }
    if let Some(gm) = gamma {
        if let Some(buf) = grad_buf(grads, nodes, gm) {
            elems(&mut |i, grp, p| buf[p] += g[i] * (xv[i] - mean[grp]) * rstd[grp]);
        }
    }
    if grad_buf(grads, nodes, x).is_none() {
        return;
    }
    // dx = rstd/N·(N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)) per group.
    let mut sum_d = vec![T::zero(); groups];
    let mut sum_dx = vec![T::zero(); groups];
    elems(&mut |i, grp, p| {
        let dxhat = gv.map_or(g[i], |gv| g[i] * gv[p]);
        let xhat = (xv[i] - mean[grp]) * rstd[grp];
        sum_d[grp] += dxhat;
        sum_dx[grp] += dxhat * xhat;
    });
    let n = T::from_usize(group_size).expect("size");
    let buf = grad_buf(grads, nodes, x).expect("checked above");
    elems(&mut |i, grp, p| {
        let dxhat = gv.map_or(g[i], |gv| g[i] * gv[p]);
        let xhat = (xv[i] - mean[grp]) * rstd[grp];
        buf[i] += rstd[grp] / n * (n * dxhat - sum_d[grp] - xhat * sum_dx[grp]);
    });
}
