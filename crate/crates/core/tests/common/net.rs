//! Network probes shared by the architecture and acceptance tests.

use super::{randn, rng};
use subband_aec::autodiff::{ModelParams, Tape, Tensor, Var};
use subband_aec::stfgcrn::{Ctx, Heads, NetState, NetworkConfig, Stfgcrn};

pub fn small() -> NetworkConfig {
    NetworkConfig {
        channels: 4,
        fd_layers: 2,
        tfcm_layers: 2,
        freq_bins: 8,
        vad_channels: 2,
        ..NetworkConfig::default()
    }
}

pub fn net(cfg: NetworkConfig, seed: u64) -> Stfgcrn<f64> {
    Stfgcrn::new(cfg, seed).unwrap()
}

pub fn input(cfg: &NetworkConfig, batch: usize, frames: usize, seed: u64) -> Tensor<f64> {
    randn(&mut rng(seed), &[batch, 6, frames, cfg.freq_bins])
}

/// Gradient of `Σ r ⊙ y` with respect to `x` for a block `f`, where `r` is
/// nonzero only on the selected output frame (or everywhere if `None`).
pub fn probe<F>(params: &ModelParams<f64>, x: &Tensor<f64>, frame: Option<usize>, bin: Option<usize>, f: F) -> Tensor<f64>
where
    F: Fn(&mut Ctx<f64>, Var) -> Var,
{
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let mut state = NetState::new();
    let xv = tape.param(x.clone());
    let y = {
        let mut ctx = Ctx::new(&mut tape, &bound, &mut state);
        f(&mut ctx, xv)
    };
    let shape = tape.shape(y).to_vec();
    let mut r = randn(&mut rng(99), &shape);
    let (t_ax, f_ax) = (shape.len() - 2, shape.len() - 1);
    let strides: Vec<usize> = (0..shape.len()).map(|a| shape[a + 1..].iter().product()).collect();
    for (i, v) in r.data_mut().iter_mut().enumerate() {
        let t = i / strides[t_ax] % shape[t_ax];
        let k = i / strides[f_ax] % shape[f_ax];
        if frame.is_some_and(|s| s != t) || bin.is_some_and(|b| b != k) {
            *v = 0.0;
        }
    }
    let rv = tape.constant(r);
    let p = tape.mul(y, rv).unwrap();
    let l = tape.sum_all(p);
    let g = tape.backward(l).unwrap();
    Tensor::new(x.shape(), g.get(xv).unwrap().to_vec()).unwrap()
}

/// Largest |g| over each index of `axis` of a 4-D tensor.
pub fn profile(g: &Tensor<f64>, axis: usize) -> Vec<f64> {
    let s = g.shape();
    let mut out = vec![0.0f64; s[axis]];
    let strides = [s[1] * s[2] * s[3], s[2] * s[3], s[3], 1];
    for (i, v) in g.data().iter().enumerate() {
        let k = i / strides[axis] % s[axis];
        out[k] = out[k].max(v.abs());
    }
    out
}

pub fn four_layer(cfg: NetworkConfig) -> NetworkConfig {
    NetworkConfig { tfcm_layers: 4, ..cfg }
}

/// Every network output stacked on the channel axis for probing: mask, Ŝ,
/// Ẑ, and the two speech probabilities repeated over frequency.
pub fn all_outputs(model: &Stfgcrn<f64>, tape: &mut Tape<f64>, x: Var, state: &mut NetState<f64>) -> Var {
    let bound = model.params.bind_frozen(tape);
    let out = model.forward(tape, &bound, x, state, Heads::ALL).unwrap();
    let shape = tape.shape(out.s_re).to_vec();
    let (b, t, f) = (shape[0], shape[1], shape[2]);
    let mask = tape.reshape(out.mask, &[b, 2, t, f]).unwrap();
    let lift = |tape: &mut Tape<f64>, v: Var| tape.reshape(v, &[b, 1, t, f]).unwrap();
    let (ez_re, ez_im) = out.echo.unwrap();
    let parts = [out.s_re, out.s_im, ez_re, ez_im].map(|v| lift(tape, v));
    let mut all = vec![mask];
    all.extend(parts);
    for p in [out.p_near.unwrap(), out.p_far.unwrap()] {
        let p = tape.reshape(p, &[b, 1, t, 1]).unwrap();
        all.push(tape.concat(&vec![p; f], 3).unwrap());
    }
    tape.concat(&all, 1).unwrap()
}

