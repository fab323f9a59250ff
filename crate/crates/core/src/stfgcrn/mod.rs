//! Gated convolutional recurrent post-filter operating on sub-band
//! spectrograms.
//!
//! Input features are `[B, 6, T, F]`: real and imaginary parts of the
//! microphone `D`, linear-filter output `E`, and linear echo estimate `Y`.
//! Each sub-band is an independent batch item with shared weights. The
//! network predicts a complex mask `M` applied to `E`, and optionally an echo
//! spectrum `Ẑ` and per-frame near/far speech probabilities.

pub mod blocks;
mod init;
mod stream;

pub use stream::StreamingPostFilter;

use crate::autodiff::{load_checkpoint, save_checkpoint, BoundParams, ModelParams, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
pub use blocks::Ctx;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    pub channels: usize,
    pub fd_layers: usize,
    /// `(time, frequency)` kernel of the gated (transposed) convolutions.
    pub kernel: (usize, usize),
    /// Frequency stride of each down/up-sampling layer.
    pub freq_stride: usize,
    pub tfcm_layers: usize,
    pub input_channels: usize,
    pub freq_bins: usize,
    pub vad_channels: usize,
    pub use_tfcm: bool,
    pub use_vad: bool,
    pub use_echo_decoder: bool,
    /// When set, the mask is squashed to `bound·tanh(m/bound)`.
    pub mask_bound: Option<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            channels: 80,
            fd_layers: 4,
            kernel: (2, 3),
            freq_stride: 2,
            tfcm_layers: 4,
            input_channels: 6,
            freq_bins: 128,
            vad_channels: 8,
            use_tfcm: true,
            use_vad: true,
            use_echo_decoder: true,
            mask_bound: None,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("network: {m}")));
        if self.channels == 0 || self.fd_layers == 0 || self.vad_channels == 0 {
            return bad("channel and layer counts must be positive");
        }
        if self.input_channels != 6 {
            return bad("input must have 6 channels (re/im of D, E, Y)");
        }
        if self.freq_stride == 0 || self.kernel.0 == 0 || self.kernel.1 < self.freq_stride {
            return bad("frequency kernel must be at least the stride");
        }
        let down = self.freq_stride.pow(self.fd_layers as u32);
        if self.freq_bins % down != 0 {
            return bad(&format!("{} bins not divisible by {down}", self.freq_bins));
        }
        if matches!(self.mask_bound, Some(b) if !(b > 0.0)) {
            return bad("mask bound must be positive");
        }
        Ok(())
    }

    /// Frequency bins after encoder layer `l` (0-based).
    pub fn bins_after(&self, l: usize) -> usize {
        self.freq_bins / self.freq_stride.pow(l as u32 + 1)
    }

    fn to_meta(self) -> BTreeMap<String, f64> {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        BTreeMap::from([
            ("channels".into(), self.channels as f64),
            ("fd_layers".into(), self.fd_layers as f64),
            ("kernel_t".into(), self.kernel.0 as f64),
            ("kernel_f".into(), self.kernel.1 as f64),
            ("freq_stride".into(), self.freq_stride as f64),
            ("tfcm_layers".into(), self.tfcm_layers as f64),
            ("input_channels".into(), self.input_channels as f64),
            ("freq_bins".into(), self.freq_bins as f64),
            ("vad_channels".into(), self.vad_channels as f64),
            ("use_tfcm".into(), b(self.use_tfcm)),
            ("use_vad".into(), b(self.use_vad)),
            ("use_echo_decoder".into(), b(self.use_echo_decoder)),
            ("mask_bound".into(), self.mask_bound.unwrap_or(0.0)),
        ])
    }

    fn from_meta(meta: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |k: &str| {
            meta.get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("checkpoint lacks architecture field {k}")))
        };
        let n = |k: &str| get(k).map(|v| v as usize);
        let cfg = Self {
            channels: n("channels")?,
            fd_layers: n("fd_layers")?,
            kernel: (n("kernel_t")?, n("kernel_f")?),
            freq_stride: n("freq_stride")?,
            tfcm_layers: n("tfcm_layers")?,
            input_channels: n("input_channels")?,
            freq_bins: n("freq_bins")?,
            vad_channels: n("vad_channels")?,
            use_tfcm: get("use_tfcm")? != 0.0,
            use_vad: get("use_vad")? != 0.0,
            use_echo_decoder: get("use_echo_decoder")? != 0.0,
            mask_bound: Some(get("mask_bound")?).filter(|&b| b > 0.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which auxiliary branches to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub echo: bool,
    pub vad: bool,
}

impl Heads {
    pub const ALL: Heads = Heads { echo: true, vad: true };
    pub const MASK_ONLY: Heads = Heads { echo: false, vad: false };
}

/// Outputs as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct NetworkOutput {
    /// `[B, 2, T, F]` real/imaginary mask.
    pub mask: Var,
    /// Enhanced spectrum `M ⊙ E`, real and imaginary parts, each `[B, T, F]`.
    pub s_re: Var,
    pub s_im: Var,
    /// Echo estimate `(re, im)`, each `[B, T, F]`.
    pub echo: Option<(Var, Var)>,
    /// Near-end and far-end speech probabilities, `[B, T]`.
    pub p_near: Option<Var>,
    pub p_far: Option<Var>,
}

/// Causal left context and recurrent state carried between calls.
#[derive(Debug, Clone, Default)]
pub struct NetState<T> {
    caches: BTreeMap<String, Tensor<T>>,
    lstm: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> NetState<T> {
    pub fn new() -> Self {
        Self {
            caches: BTreeMap::new(),
            lstm: None,
        }
    }

    pub fn reset(&mut self) {
        self.caches.clear();
        self.lstm = None;
    }
}

#[derive(Debug, Clone)]
pub struct Stfgcrn<T> {
    pub config: NetworkConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Stfgcrn<T> {
    /// Randomly initialized network.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init::init_params(&config, seed).cast();
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Makes the mask exactly `1 + 0i` for every input.
    pub fn set_identity_mask(&mut self) {
        let w = self.params.get_mut("mask.out.w").expect("mask output layer");
        w.data_mut().fill(T::zero());
        let b = self.params.get_mut("mask.out.b").expect("mask output bias");
        b.data_mut().copy_from_slice(&[T::one(), T::zero()]);
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &BoundParams,
        input: Var,
        state: &mut NetState<T>,
        heads: Heads,
    ) -> Result<NetworkOutput> {
        let cfg = &self.config;
        let shape = tape.shape(input).to_vec();
        if shape.len() != 4 || shape[1] != cfg.input_channels || shape[3] != cfg.freq_bins {
            return Err(Error::Shape(format!(
                "network input must be [B, {}, T, {}], got {shape:?}",
                cfg.input_channels, cfg.freq_bins
            )));
        }
        let (batch, frames, bins) = (shape[0], shape[2], shape[3]);
        let mut ctx = Ctx { tape, params, state };

        let mut skips = Vec::with_capacity(cfg.fd_layers);
        let mut x = input;
        for l in 0..cfg.fd_layers {
            x = ctx.gconv(&format!("enc.{l}"), x, cfg.kernel, cfg.freq_stride)?;
            if cfg.use_tfcm {
                x = ctx.tfcm(&format!("enc.{l}.tfcm"), x, cfg.tfcm_layers, true)?;
            }
            skips.push(x);
        }
        let bottleneck = ctx.ftlstm("lstm", x)?;

        let mask = self.decoder(&mut ctx, "mask", bottleneck, &skips)?;
        let mask = match cfg.mask_bound {
            Some(bound) => {
                let m = ctx.tape.scale(mask, 1.0 / bound);
                let m = ctx.tape.tanh(m);
                ctx.tape.scale(m, bound)
            }
            None => mask,
        };
        let plane = |ctx: &mut Ctx<T>, x: Var, c: usize| -> Result<Var> {
            let s = ctx.tape.slice(x, 1, c, 1)?;
            ctx.tape.reshape(s, &[batch, frames, bins])
        };
        let (mr, mi) = (plane(&mut ctx, mask, 0)?, plane(&mut ctx, mask, 1)?);
        let (er, ei) = (plane(&mut ctx, input, 2)?, plane(&mut ctx, input, 3)?);
        let (s_re, s_im) = complex_mul(ctx.tape, (mr, mi), (er, ei))?;

        let echo = if heads.echo && cfg.use_echo_decoder {
            let z = self.decoder(&mut ctx, "echo", bottleneck, &skips)?;
            Some((plane(&mut ctx, z, 0)?, plane(&mut ctx, z, 1)?))
        } else {
            None
        };
        let (p_near, p_far) = if heads.vad && cfg.use_vad {
            (
                Some(ctx.vad_head("vad.near", bottleneck)?),
                Some(ctx.vad_head("vad.far", bottleneck)?),
            )
        } else {
            (None, None)
        };
        Ok(NetworkOutput {
            mask,
            s_re,
            s_im,
            echo,
            p_near,
            p_far,
        })
    }

    fn decoder(&self, ctx: &mut Ctx<T>, name: &str, bottleneck: Var, skips: &[Var]) -> Result<Var> {
        let cfg = &self.config;
        let mut x = bottleneck;
        for j in 0..cfg.fd_layers {
            let prefix = format!("{name}.{j}");
            let skip = ctx.conv(&format!("{prefix}.skip"), skips[cfg.fd_layers - 1 - j], Default::default())?;
            let joined = ctx.tape.concat(&[x, skip], 1)?;
            x = ctx.trgconv(&prefix, joined, cfg.kernel, cfg.freq_stride)?;
            if cfg.use_tfcm {
                x = ctx.tfcm(&format!("{prefix}.tfcm"), x, cfg.tfcm_layers, false)?;
            }
        }
        ctx.output_conv(&format!("{name}.out"), x, cfg.kernel)
    }

    /// Inference without gradients. Returns the mask `[B, 2, T, F]`.
    pub fn infer_mask(&self, input: &Tensor<T>, state: &mut NetState<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &bound, x, state, Heads::MASK_ONLY)?;
        Ok(tape.value(out.mask).clone())
    }
}

impl Stfgcrn<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.params, &self.config.to_meta())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(path)?;
        let config = NetworkConfig::from_meta(&meta)?;
        let expected = init::init_params(&config, 0);
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => {
                    return Err(Error::Checkpoint {
                        path: path.to_path_buf(),
                        msg: format!("missing or misshaped tensor {name}"),
                    })
                }
            }
        }
        Ok(Self { config, params })
    }
}

/// `(a_re + i·a_im)·(b_re + i·b_im)`.
pub(crate) fn complex_mul<T: Scalar>(tape: &mut Tape<T>, a: (Var, Var), b: (Var, Var)) -> Result<(Var, Var)> {
    let rr = tape.mul(a.0, b.0)?;
    let ii = tape.mul(a.1, b.1)?;
    let ri = tape.mul(a.0, b.1)?;
    let ir = tape.mul(a.1, b.0)?;
    Ok((tape.sub(rr, ii)?, tape.add(ri, ir)?))
}
