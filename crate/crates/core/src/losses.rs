//! Multi-task training objective.
//!
//! Spectra are `(re, im)` pairs of `[B, T, F]` tape variables, one batch
//! item per sub-band. Every term is a mean over bins, which is the per-band
//! sum divided by `T·F`, averaged over bands.

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::stfgcrn::NetworkOutput;
use serde::{Deserialize, Serialize};

/// Weights of the auxiliary terms in the final loss; the echo-aware and
/// asymmetric terms have weight 1.
pub const W_MASK: f64 = 0.2;
pub const W_DTD: f64 = 0.1;
pub const W_ECHO: f64 = 0.05;

pub type Complex = (Var, Var);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Power-law compression exponent.
    pub compress: f64,
    /// Weight of the compressed complex term against the magnitude term.
    pub beta: f64,
    /// Echo emphasis in the echo-aware weight `1 + λ·|Z|²/(|Z|²+|S|²+ε)`.
    pub lambda: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            compress: 0.3,
            beta: 0.3,
            lambda: 2.0,
            eps: 1e-8,
        }
    }
}

/// Scalar values of every term of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub echo_aware: f64,
    pub mask: f64,
    pub dtd: f64,
    pub dtd_near: f64,
    pub dtd_far: f64,
    pub echo: f64,
    pub asym: f64,
    #[serde(rename = "final")]
    pub total: f64,
}

impl LossReport {
    /// Fills `total` from the components.
    pub fn with_total(mut self) -> Self {
        self.total = final_loss(self.echo_aware, self.mask, self.dtd, self.echo, self.asym);
        self
    }
}

pub fn final_loss(echo_aware: f64, mask: f64, dtd: f64, echo: f64, asym: f64) -> f64 {
    echo_aware + W_MASK * mask + W_DTD * dtd + W_ECHO * echo + asym
}

/// Clean near-end and echo spectra, each `[B, T, F]`, and per-frame 0/1
/// activity labels: length `T` shared by all batch items, or `B·T` with one
/// row per item.
#[derive(Debug, Clone)]
pub struct TrainingTargets<T> {
    pub s_re: Tensor<T>,
    pub s_im: Tensor<T>,
    pub z_re: Tensor<T>,
    pub z_im: Tensor<T>,
    pub near: Vec<T>,
    pub far: Vec<T>,
}

impl<T: Scalar> TrainingTargets<T> {
    pub fn validate(&self) -> Result<()> {
        let shape = self.s_re.shape();
        if shape.len() != 3 {
            return Err(Error::Shape(format!("targets must be [B, T, F], got {shape:?}")));
        }
        for t in [&self.s_im, &self.z_re, &self.z_im] {
            if t.shape() != shape {
                return Err(Error::Shape(format!("target spectra disagree: {:?} vs {shape:?}", t.shape())));
            }
        }
        for labels in [&self.near, &self.far] {
            if labels.len() != shape[1] && labels.len() != shape[0] * shape[1] {
                return Err(Error::Shape(format!("{} labels for {} frames", labels.len(), shape[1])));
            }
            if labels.iter().any(|&l| l != T::zero() && l != T::one()) {
                return Err(Error::Config("activity labels must be 0 or 1".into()));
            }
        }
        Ok(())
    }
}

fn square<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    tape.mul(x, x)
}

fn weighted_mean<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Option<&Tensor<T>>) -> Result<Var> {
    match w {
        Some(w) => {
            let wv = tape.constant(w.clone());
            let p = tape.mul(x, wv)?;
            Ok(tape.mean_all(p))
        }
        None => Ok(tape.mean_all(x)),
    }
}

/// Mean complex magnitude of `est − target`.
pub fn loss_echo<T: Scalar>(tape: &mut Tape<T>, est: Complex, target: Complex) -> Result<Var> {
    let dr = tape.sub(est.0, target.0)?;
    let di = tape.sub(est.1, target.1)?;
    let mag = tape.cmag_pow(dr, di, 1.0)?;
    Ok(tape.mean_all(mag))
}

/// Compressed spectral loss, optionally weighted per bin:
/// `mean[w·(|Ŝ|^c − |S|^c)²] + β·mean[w·|Ŝ^c e^{i∠Ŝ} − S^c e^{i∠S}|²]`.
fn compressed<T: Scalar>(
    tape: &mut Tape<T>,
    est: Complex,
    target: Complex,
    cfg: &LossConfig,
    weight: Option<&Tensor<T>>,
) -> Result<Var> {
    let c = cfg.compress;
    let me = tape.cmag_pow(est.0, est.1, c)?;
    let mt = tape.cmag_pow(target.0, target.1, c)?;
    let dm = tape.sub(me, mt)?;
    let dm2 = square(tape, dm)?;
    let mag = weighted_mean(tape, dm2, weight)?;

    let mut cplx = Vec::with_capacity(2);
    for imag in [false, true] {
        let a = tape.ccompress(est.0, est.1, c, imag)?;
        let b = tape.ccompress(target.0, target.1, c, imag)?;
        let d = tape.sub(a, b)?;
        cplx.push(square(tape, d)?);
    }
    let d2 = tape.add(cplx[0], cplx[1])?;
    let cplx = weighted_mean(tape, d2, weight)?;
    let cplx = tape.scale(cplx, cfg.beta);
    tape.add(mag, cplx)
}

pub fn loss_mask<T: Scalar>(tape: &mut Tape<T>, est: Complex, target: Complex, cfg: &LossConfig) -> Result<Var> {
    compressed(tape, est, target, cfg, None)
}

/// Per-bin weight `1 + λ·|Z|²/(|Z|²+|S|²+ε)`.
pub fn echo_weight<T: Scalar>(s: (&Tensor<T>, &Tensor<T>), z: (&Tensor<T>, &Tensor<T>), cfg: &LossConfig) -> Tensor<T> {
    let (lambda, eps) = (T::lit(cfg.lambda), T::lit(cfg.eps));
    let data = s
        .0
        .data()
        .iter()
        .zip(s.1.data())
        .zip(z.0.data().iter().zip(z.1.data()))
        .map(|((&sr, &si), (&zr, &zi))| {
            let pz = zr * zr + zi * zi;
            let ps = sr * sr + si * si;
            T::one() + lambda * pz / (pz + ps + eps)
        })
        .collect();
    Tensor::new(s.0.shape(), data).expect("same shape")
}

/// Compressed spectral loss with bins weighted by echo dominance.
pub fn loss_echo_aware<T: Scalar>(
    tape: &mut Tape<T>,
    est: Complex,
    targets: &TrainingTargets<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    let w = echo_weight((&targets.s_re, &targets.s_im), (&targets.z_re, &targets.z_im), cfg);
    let s = (tape.constant(targets.s_re.clone()), tape.constant(targets.s_im.clone()));
    compressed(tape, est, s, cfg, Some(&w))
}

/// `mean[max(0, |Ŝ|^c − |S|^c)²]`: penalizes only energy above the target.
pub fn loss_asym<T: Scalar>(tape: &mut Tape<T>, est: Complex, target: Complex, cfg: &LossConfig) -> Result<Var> {
    let me = tape.cmag_pow(est.0, est.1, cfg.compress)?;
    let mt = tape.cmag_pow(target.0, target.1, cfg.compress)?;
    let d = tape.sub(me, mt)?;
    let over = tape.relu(d);
    let sq = square(tape, over)?;
    Ok(tape.mean_all(sq))
}

/// Binary cross-entropy of both speech-presence heads, each `[B, T]`,
/// against per-frame labels repeated over bands. Returns
/// `(near + far, near, far)`.
pub fn loss_dtd<T: Scalar>(tape: &mut Tape<T>, p_near: Var, near: &[T], p_far: Var, far: &[T]) -> Result<(Var, Var, Var)> {
    let tile = |tape: &Tape<T>, p: Var, labels: &[T]| -> Vec<T> {
        let bands = tape.value(p).numel() / labels.len().max(1);
        labels.iter().copied().cycle().take(bands * labels.len()).collect()
    };
    let tn = tile(tape, p_near, near);
    let tf = tile(tape, p_far, far);
    let n = tape.bce_mean(p_near, &tn)?;
    let f = tape.bce_mean(p_far, &tf)?;
    let total = tape.add(n, f)?;
    Ok((total, n, f))
}

/// Tape variables of every term plus the final weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub echo_aware: Var,
    pub mask: Var,
    pub asym: Var,
    pub dtd: Option<(Var, Var, Var)>,
    pub echo: Option<Var>,
}

impl LossTerms {
    pub fn report<T: Scalar>(&self, tape: &Tape<T>) -> LossReport {
        let v = |x: Var| tape.value(x).item().as_f64();
        let (dtd, dtd_near, dtd_far) = self.dtd.map_or((0.0, 0.0, 0.0), |(a, b, c)| (v(a), v(b), v(c)));
        LossReport {
            echo_aware: v(self.echo_aware),
            mask: v(self.mask),
            dtd,
            dtd_near,
            dtd_far,
            echo: self.echo.map_or(0.0, v),
            asym: v(self.asym),
            total: v(self.total),
        }
    }
}

/// Builds the full objective on the tape. Auxiliary terms whose heads were
/// not evaluated contribute zero.
pub fn multitask<T: Scalar>(
    tape: &mut Tape<T>,
    out: &NetworkOutput,
    targets: &TrainingTargets<T>,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    targets.validate()?;
    let est = (out.s_re, out.s_im);
    if tape.shape(out.s_re) != targets.s_re.shape() {
        return Err(Error::Shape(format!(
            "estimate {:?} vs target {:?}",
            tape.shape(out.s_re),
            targets.s_re.shape()
        )));
    }
    let s = (tape.constant(targets.s_re.clone()), tape.constant(targets.s_im.clone()));
    let echo_aware = loss_echo_aware(tape, est, targets, cfg)?;
    let mask = loss_mask(tape, est, s, cfg)?;
    let asym = loss_asym(tape, est, s, cfg)?;
    let m = tape.scale(mask, W_MASK);
    let mut total = tape.add(echo_aware, m)?;

    // Summed in the same order as `final_loss` so the reported total is
    // bit-identical to the weighted sum of the reported components.
    let dtd = match (out.p_near, out.p_far) {
        (Some(pn), Some(pf)) => {
            let terms = loss_dtd(tape, pn, &targets.near, pf, &targets.far)?;
            let w = tape.scale(terms.0, W_DTD);
            total = tape.add(total, w)?;
            Some(terms)
        }
        _ => None,
    };
    let echo = match out.echo {
        Some(z_est) => {
            let z = (tape.constant(targets.z_re.clone()), tape.constant(targets.z_im.clone()));
            let l = loss_echo(tape, z_est, z)?;
            let w = tape.scale(l, W_ECHO);
            total = tape.add(total, w)?;
            Some(l)
        }
        None => None,
    };
    total = tape.add(total, asym)?;
    Ok(LossTerms {
        total,
        echo_aware,
        mask,
        asym,
        dtd,
        echo,
    })
}
