use super::{add_into, grad_buf, tensor::split_axis, Node, Op, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Squared magnitudes below this are floored when forming gradients of the
/// power-law ops, which are singular at zero.
const GRAD_FLOOR: f64 = 1e-12;

pub(crate) const BCE_CLAMP: f64 = 1e-7;

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::lit(s);
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = T::lit(s);
        let t = self.value(a).map(|x| x + s);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(T::zero()));
        self.push(t, Op::Relu(a), &[a])
    }

    /// Parametric ReLU with one slope per channel (axis 1).
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.value(alpha).numel() != shape[1] {
            return Err(Error::Shape(format!(
                "prelu: {} slopes for input {shape:?}",
                self.value(alpha).numel()
            )));
        }
        let (outer, chans, inner) = split_axis(&shape, 1);
        let xv = self.value(x).data();
        let av = self.value(alpha).data();
        let mut out = Vec::with_capacity(xv.len());
        for o in 0..outer {
            for (c, &a) in av.iter().enumerate().take(chans) {
                let base = (o * chans + c) * inner;
                out.extend(xv[base..base + inner].iter().map(|&v| if v > T::zero() { v } else { a * v }));
            }
        }
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Prelu { x, alpha }, &[x, alpha]))
    }

    /// `(re² + im²)^(p/2)`, i.e. the complex magnitude raised to `p`.
    pub fn cmag_pow(&mut self, re: Var, im: Var, p: f64) -> Result<Var> {
        self.same_shape(re, im, "cmag_pow")?;
        if p <= 0.0 {
            return Err(Error::Config("cmag_pow exponent must be positive".into()));
        }
        let half = T::lit(p / 2.0);
        let t = self.zip_map(re, im, |a, b| (a * a + b * b).powf(half));
        Ok(self.push(t, Op::CMagPow { re, im, p: T::lit(p) }, &[re, im]))
    }

    /// Real (or imaginary) part of the power-law compressed complex value
    /// `z·|z|^(c−1)`, which keeps the phase of `z`. Zero maps to zero.
    pub fn ccompress(&mut self, re: Var, im: Var, c: f64, imag: bool) -> Result<Var> {
        self.same_shape(re, im, "ccompress")?;
        let e = T::lit((c - 1.0) / 2.0);
        let t = self.zip_map(re, im, |a, b| {
            let r2 = a * a + b * b;
            if r2 == T::zero() {
                T::zero()
            } else {
                (if imag { b } else { a }) * r2.powf(e)
            }
        });
        Ok(self.push(
            t,
            Op::CCompress {
                re,
                im,
                c: T::lit(c),
                imag,
            },
            &[re, im],
        ))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 targets,
    /// with `p` clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce_mean(&mut self, p: Var, target: &[T]) -> Result<Var> {
        let pv = self.value(p).data();
        if pv.len() != target.len() || pv.is_empty() {
            return Err(Error::Shape(format!(
                "bce: {} probabilities vs {} targets",
                pv.len(),
                target.len()
            )));
        }
        let (lo, hi) = (T::lit(BCE_CLAMP), T::lit(1.0 - BCE_CLAMP));
        let total: T = pv
            .iter()
            .zip(target)
            .map(|(&pr, &t)| {
                let pc = pr.max(lo).min(hi);
                -(t * pc.ln() + (T::one() - t) * (T::one() - pc).ln())
            })
            .sum();
        let n = T::from_usize(pv.len()).expect("size");
        let out = Tensor::scalar(total / n);
        Ok(self.push(
            out,
            Op::Bce {
                p,
                target: target.to_vec(),
            },
            &[p],
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_usize(v.numel().max(1)).expect("size");
        let t = Tensor::scalar(v.sum() / n);
        self.push(t, Op::MeanAll(a), &[a])
    }
}

pub(crate) fn prelu_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    x: Var,
    alpha: Var,
    g: &[T],
) {
    let xv = nodes[x.0].value.data();
    let av = nodes[alpha.0].value.data();
    let (outer, chans, inner) = split_axis(nodes[x.0].value.shape(), 1);
    if let Some(buf) = grad_buf(grads, nodes, x) {
        for o in 0..outer {
            for (c, &a) in av.iter().enumerate().take(chans) {
                let base = (o * chans + c) * inner;
                for i in base..base + inner {
                    buf[i] += if xv[i] > T::zero() { g[i] } else { a * g[i] };
                }
            }
        }
    }
    if let Some(buf) = grad_buf(grads, nodes, alpha) {
        for o in 0..outer {
            for (c, d) in buf.iter_mut().enumerate().take(chans) {
                let base = (o * chans + c) * inner;
                for i in base..base + inner {
                    if xv[i] <= T::zero() {
                        *d += g[i] * xv[i];
                    }
                }
            }
        }
    }
}

pub(crate) fn cmag_pow_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    re: Var,
    im: Var,
    p: T,
    g: &[T],
) {
    let (rv, iv) = (nodes[re.0].value.data(), nodes[im.0].value.data());
    let floor = T::lit(GRAD_FLOOR);
    let e = p / T::lit(2.0) - T::one();
    let coef: Vec<T> = rv
        .iter()
        .zip(iv)
        .zip(g)
        .map(|((&a, &b), &gv)| gv * p * (a * a + b * b).max(floor).powf(e))
        .collect();
    if let Some(buf) = grad_buf(grads, nodes, re) {
        for ((d, &c), &a) in buf.iter_mut().zip(&coef).zip(rv) {
            *d += c * a;
        }
    }
    if let Some(buf) = grad_buf(grads, nodes, im) {
        for ((d, &c), &b) in buf.iter_mut().zip(&coef).zip(iv) {
            *d += c * b;
        }
    }
}

pub(crate) fn ccompress_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    re: Var,
    im: Var,
    c: T,
    imag: bool,
    g: &[T],
) {
    let (rv, iv) = (nodes[re.0].value.data(), nodes[im.0].value.data());
    let floor = T::lit(GRAD_FLOOR);
    let e = (c - T::one()) / T::lit(2.0);
    let cm1 = c - T::one();
    let mut d_re = vec![T::zero(); g.len()];
    let mut d_im = vec![T::zero(); g.len()];
    for i in 0..g.len() {
        let (a, b) = (rv[i], iv[i]);
        let r2 = (a * a + b * b).max(floor);
        let gr = r2.powf(e);
        let cross = cm1 * gr * a * b / r2;
        if imag {
            d_re[i] = g[i] * cross;
            d_im[i] = g[i] * gr * (T::one() + cm1 * b * b / r2);
        } else {
            d_re[i] = g[i] * gr * (T::one() + cm1 * a * a / r2);
            d_im[i] = g[i] * cross;
        }
    }
    add_into(grads, nodes, re, &d_re);
    add_into(grads, nodes, im, &d_im);
}

pub(crate) fn bce_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    p: Var,
    target: &[T],
    g: T,
) {
    let pv = nodes[p.0].value.data();
    let (lo, hi) = (T::lit(BCE_CLAMP), T::lit(1.0 - BCE_CLAMP));
    let n = T::from_usize(pv.len()).expect("size");
    if let Some(buf) = grad_buf(grads, nodes, p) {
        for ((d, &pr), &t) in buf.iter_mut().zip(pv).zip(target) {
            if pr > lo && pr < hi {
                *d += g * (-t / pr + (T::one() - t) / (T::one() - pr)) / n;
            }
        }
    }
}
