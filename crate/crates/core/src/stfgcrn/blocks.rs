//! Building blocks of the post-filter, written against a [`Ctx`] that bundles
//! the tape, the bound parameters, and the streaming caches.
//!
//! Every time-causal operator takes its left context from a per-site cache
//! instead of zero padding. A fresh (all-zero) state therefore reproduces the
//! offline forward pass, and carrying the state across calls turns the same
//! code into a frame-by-frame streaming network.

use super::NetState;
use crate::autodiff::{BoundParams, ConvSpec, LstmState, LstmWeights, Scalar, Tape, Tensor, Var};
use crate::error::Result;

pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a BoundParams,
    pub state: &'a mut NetState<T>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a BoundParams, state: &'a mut NetState<T>) -> Self {
        Self { tape, params, state }
    }

    fn p(&self, name: &str) -> Var {
        self.params.var(name)
    }

    /// Prepends `frames` cached time frames to `x: [B, C, T, F]` and stores
    /// the last `frames` frames of the result for the next call.
    pub fn with_history(&mut self, site: &str, x: Var, frames: usize) -> Result<Var> {
        if frames == 0 {
            return Ok(x);
        }
        let shape = self.tape.shape(x).to_vec();
        let cached = match self.state.caches.get(site) {
            Some(c) if c.shape() == [shape[0], shape[1], frames, shape[3]] => c.clone(),
            _ => Tensor::zeros(&[shape[0], shape[1], frames, shape[3]]),
        };
        let c = self.tape.constant(cached);
        let joined = self.tape.concat(&[c, x], 2)?;
        let total = frames + shape[2];
        let tail = tail_frames(self.tape.value(joined), total - frames, frames);
        self.state.caches.insert(site.to_string(), tail);
        Ok(joined)
    }

    pub fn conv(&mut self, prefix: &str, x: Var, spec: ConvSpec) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.params.try_var(&format!("{prefix}.b"));
        self.tape.conv2d(x, w, b, spec)
    }

    pub fn prelu(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let a = self.p(&format!("{prefix}.alpha"));
        self.tape.prelu(x, a)
    }

    pub fn layer_norm(&mut self, prefix: &str, x: Var, axes: &[usize]) -> Result<Var> {
        let g = self.p(&format!("{prefix}.gamma"));
        let b = self.p(&format!("{prefix}.beta"));
        self.tape.layer_norm(x, axes, Some(g), Some(b))
    }

    /// Gated convolution: `PReLU(LN(A(x))) ⊙ σ(G(x))`, causal in time,
    /// frequency stride `sf`.
    pub fn gconv(&mut self, prefix: &str, x: Var, kernel: (usize, usize), sf: usize) -> Result<Var> {
        let x = self.with_history(prefix, x, kernel.0 - 1)?;
        let spec = ConvSpec::default()
            .with_stride(1, sf)
            .with_padding([0, 0, kernel.1 - sf, 0]);
        let a = self.conv(&format!("{prefix}.conv_a"), x, spec)?;
        let g = self.conv(&format!("{prefix}.conv_g"), x, spec)?;
        self.gate(prefix, a, g)
    }

    /// Transposed gated convolution, upsampling frequency by `sf`.
    pub fn trgconv(&mut self, prefix: &str, x: Var, kernel: (usize, usize), sf: usize) -> Result<Var> {
        let x = self.with_history(prefix, x, kernel.0 - 1)?;
        let spec = ConvSpec::default()
            .with_stride(1, sf)
            .with_padding([0, 0, kernel.1 - sf, 0]);
        let a = self.causal_conv_t(&format!("{prefix}.conv_a"), x, kernel.0, spec)?;
        let g = self.causal_conv_t(&format!("{prefix}.conv_g"), x, kernel.0, spec)?;
        self.gate(prefix, a, g)
    }

    /// Plain (ungated, linear) transposed convolution used for the output
    /// projections; frequency resolution is kept.
    pub fn output_conv(&mut self, prefix: &str, x: Var, kernel: (usize, usize)) -> Result<Var> {
        let x = self.with_history(prefix, x, kernel.0 - 1)?;
        let k = kernel.1 - 1;
        let spec = ConvSpec::default().with_padding([0, 0, k / 2, k - k / 2]);
        self.causal_conv_t(prefix, x, kernel.0, spec)
    }

    /// Transposed convolution over `x` carrying `kt − 1` history frames,
    /// with the time taps unrolled into channels: output frame `t` is
    /// `Σ_i W_iᵀ·x[t − i]`. Weights are tap-major `[KT, C_in, C_out, KF]`;
    /// `spec` describes the frequency axis only.
    fn causal_conv_t(&mut self, prefix: &str, x: Var, kt: usize, spec: ConvSpec) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.params.try_var(&format!("{prefix}.b"));
        let ws = self.tape.shape(w).to_vec();
        let w = self.tape.reshape(w, &[ws[0] * ws[1], ws[2], 1, ws[3]])?;
        if kt == 1 {
            return self.tape.conv_transpose2d(x, w, b, spec);
        }
        let frames = self.tape.shape(x)[2] - (kt - 1);
        let taps = (0..kt)
            .map(|i| self.tape.slice(x, 2, kt - 1 - i, frames))
            .collect::<Result<Vec<_>>>()?;
        let stacked = self.tape.concat(&taps, 1)?;
        self.tape.conv_transpose2d(stacked, w, b, spec)
    }

    fn gate(&mut self, prefix: &str, a: Var, g: Var) -> Result<Var> {
        let a = self.layer_norm(&format!("{prefix}.ln"), a, &[1, 3])?;
        let a = self.prelu(&format!("{prefix}.act"), a)?;
        let g = self.tape.sigmoid(g);
        self.tape.mul(a, g)
    }

    /// Stack of residual dilated blocks. Block `i` uses time dilation `2^i`
    /// and frequency dilation `2^i` when `dilate_freq`, otherwise 1.
    pub fn tfcm(&mut self, prefix: &str, mut x: Var, layers: usize, dilate_freq: bool) -> Result<Var> {
        let chans = self.tape.shape(x)[1];
        for i in 0..layers {
            let p = format!("{prefix}.{i}");
            let dt = 1usize << i;
            let df = if dilate_freq { dt } else { 1 };
            let h = self.conv(&format!("{p}.pw1"), x, ConvSpec::default())?;
            let h = self.with_history(&format!("{p}.dw"), h, 2 * dt)?;
            let spec = ConvSpec::default()
                .with_dilation(dt, df)
                .with_padding([0, 0, df, df])
                .with_groups(chans);
            let h = self.conv(&format!("{p}.dw"), h, spec)?;
            let h = self.conv(&format!("{p}.pw2"), h, ConvSpec::default())?;
            let h = self.prelu(&format!("{p}.act"), h)?;
            let h = self.layer_norm(&format!("{p}.ln"), h, &[1])?;
            x = self.tape.add(x, h)?;
        }
        Ok(x)
    }

    fn lstm_weights(&self, prefix: &str) -> LstmWeights {
        LstmWeights {
            w_ih: self.p(&format!("{prefix}.w_ih")),
            w_hh: self.p(&format!("{prefix}.w_hh")),
            bias: self.p(&format!("{prefix}.bias")),
        }
    }

    /// Frequency-then-time LSTM bottleneck on `[B, C, T, F]`, each followed
    /// by a dense layer, channel layer norm and a residual connection.
    pub fn ftlstm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let shape = self.tape.shape(x).to_vec();
        let (b, c, t, f) = (shape[0], shape[1], shape[2], shape[3]);

        // Frequency block: sequences run over F, one per (batch, frame).
        let xf = self.tape.permute(x, &[0, 2, 3, 1])?;
        let xf = self.tape.reshape(xf, &[b * t, f, c])?;
        let w = self.lstm_weights(&format!("{prefix}.f.lstm"));
        let (yf, _) = self.tape.lstm_seq(xf, &w, None)?;
        let yf = self.dense_norm(&format!("{prefix}.f"), yf)?;
        let yf = self.tape.reshape(yf, &[b, t, f, c])?;
        let yf = self.tape.permute(yf, &[0, 3, 1, 2])?;
        let x = self.tape.add(x, yf)?;

        // Time block: sequences run over T, one per (batch, bin); state
        // carries across calls.
        let xt = self.tape.permute(x, &[0, 3, 2, 1])?;
        let xt = self.tape.reshape(xt, &[b * f, t, c])?;
        let w = self.lstm_weights(&format!("{prefix}.t.lstm"));
        let init = match &self.state.lstm {
            Some((h, cs)) if h.shape() == [b * f, c] => LstmState {
                h: self.tape.constant(h.clone()),
                c: self.tape.constant(cs.clone()),
            },
            _ => self.tape.lstm_zero_state(b * f, &w),
        };
        let (yt, last) = self.tape.lstm_seq(xt, &w, Some(init))?;
        self.state.lstm = Some((self.tape.value(last.h).clone(), self.tape.value(last.c).clone()));
        let yt = self.dense_norm(&format!("{prefix}.t"), yt)?;
        let yt = self.tape.reshape(yt, &[b, f, t, c])?;
        let yt = self.tape.permute(yt, &[0, 3, 2, 1])?;
        self.tape.add(x, yt)
    }

    fn dense_norm(&mut self, prefix: &str, y: Var) -> Result<Var> {
        let w = self.p(&format!("{prefix}.fc.w"));
        let bias = self.p(&format!("{prefix}.fc.b"));
        let y = self.tape.linear(y, w, Some(bias))?;
        let rank = self.tape.shape(y).len();
        self.layer_norm(&format!("{prefix}.ln"), y, &[rank - 1])
    }

    /// Speech-presence head: 1×1 conv, mean over frequency, dense, sigmoid.
    /// Returns `[B, T]`.
    pub fn vad_head(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let h = self.conv(&format!("{prefix}.conv"), x, ConvSpec::default())?;
        let h = self.tape.mean_axis(h, 3)?;
        let h = self.tape.permute(h, &[0, 2, 1])?;
        let w = self.p(&format!("{prefix}.fc.w"));
        let b = self.p(&format!("{prefix}.fc.b"));
        let h = self.tape.linear(h, w, Some(b))?;
        let shape = self.tape.shape(h).to_vec();
        let h = self.tape.reshape(h, &shape[..2])?;
        Ok(self.tape.sigmoid(h))
    }
}

fn tail_frames<T: Scalar>(x: &Tensor<T>, start: usize, frames: usize) -> Tensor<T> {
    let s = x.shape();
    let (bc, t, f) = (s[0] * s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(bc * frames * f);
    for i in 0..bc {
        out.extend_from_slice(&x.data()[(i * t + start) * f..(i * t + start + frames) * f]);
    }
    Tensor::new(&[s[0], s[1], frames, f], out).expect("consistent shape")
}
