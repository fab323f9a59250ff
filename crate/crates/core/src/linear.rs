//! Partitioned-block frequency-domain NLMS echo canceller (overlap-save,
//! gradient-constrained).
//!
//! The far-end reference is split into `block`-sample blocks. Each block and
//! its predecessor form a `2·block` FFT frame; the last `partitions` frame
//! spectra are kept in a ring buffer and each is paired with one partition of
//! the frequency-domain filter. The per-bin step is `step / (power + reg)`
//! where `power` is a smoothed estimate of the total far-end power seen by
//! all partitions.
//!
//! Blocks in which the filter output would carry more energy than the
//! microphone signal are passed through unchanged (`e = mic`, `y = 0`).

use std::collections::VecDeque;

use log::warn;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{FftPlan, Waveform};
use crate::tde::{self, DelayEstimate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmsConfig {
    /// Block length in samples (20 ms at 48 kHz).
    pub block: usize,
    pub partitions: usize,
    pub step: f64,
    /// Smoothing factor of the per-bin far-end power estimate.
    pub power_smoothing: f64,
    /// Regularizer relative to the mean far-end power.
    pub regularization: f64,
    /// Adaptation freezes when the microphone block power exceeds this
    /// multiple of the predicted echo power.
    pub double_talk_ratio: f64,
    /// Number of adapted blocks before the double-talk guard is armed.
    pub guard_warmup: usize,
}

impl Default for NlmsConfig {
    fn default() -> Self {
        Self {
            block: 960,
            partitions: 10,
            step: 0.5,
            power_smoothing: 0.9,
            regularization: 1e-3,
            double_talk_ratio: 10.0,
            guard_warmup: 50,
        }
    }
}

impl NlmsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 || self.partitions == 0 {
            return Err(Error::Config("nlms block and partitions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.step) {
            return Err(Error::Config(format!("nlms step {} outside [0, 1]", self.step)));
        }
        if !(0.0..1.0).contains(&self.power_smoothing) || self.regularization <= 0.0 {
            return Err(Error::Config("nlms smoothing must be in [0,1) and regularization > 0".into()));
        }
        Ok(())
    }

    /// Modeled echo tail in samples.
    pub fn tail(&self) -> usize {
        self.block * self.partitions
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveFilterState {
    config: NlmsConfig,
    plan: FftPlan,
    weights: Vec<Vec<Complex64>>,
    spectra: VecDeque<Vec<Complex64>>,
    power: Vec<f64>,
    prev_far: Vec<f64>,
    adapted_blocks: usize,
    frozen_blocks: usize,
}

impl AdaptiveFilterState {
    pub fn new(config: NlmsConfig) -> Result<Self> {
        config.validate()?;
        let n = 2 * config.block;
        let zero = vec![Complex64::new(0.0, 0.0); n];
        Ok(Self {
            plan: FftPlan::new(n)?,
            weights: vec![zero.clone(); config.partitions],
            spectra: (0..config.partitions).map(|_| zero.clone()).collect(),
            power: vec![0.0; n],
            prev_far: vec![0.0; config.block],
            adapted_blocks: 0,
            frozen_blocks: 0,
            config,
        })
    }

    pub fn config(&self) -> &NlmsConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        let config = self.config;
        *self = Self::new(config).expect("config validated at construction");
    }

    /// Blocks skipped by the double-talk guard so far.
    pub fn frozen_blocks(&self) -> usize {
        self.frozen_blocks
    }

    pub fn weights(&self) -> &[Vec<Complex64>] {
        &self.weights
    }

    /// Current time-domain filter estimate, `partitions·block` taps.
    pub fn impulse_response(&self) -> Vec<f64> {
        let b = self.config.block;
        let mut h = Vec::with_capacity(self.config.tail());
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * b];
        for w in &self.weights {
            buf.copy_from_slice(w);
            self.plan.inverse(&mut buf);
            h.extend(buf[..b].iter().map(|c| c.re));
        }
        h
    }

    /// Process one block. Returns `(e, y)` with `e = mic − y`.
    pub fn process_block(&mut self, far: &[f64], mic: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let b = self.config.block;
        if far.len() != b || mic.len() != b {
            return Err(Error::Shape(format!(
                "nlms expects {b}-sample blocks, got far={} mic={}",
                far.len(),
                mic.len()
            )));
        }
        if far.iter().chain(mic).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("nlms input block".into()));
        }
        let n = 2 * b;

        let mut frame = vec![Complex64::new(0.0, 0.0); n];
        for (dst, &v) in frame.iter_mut().zip(self.prev_far.iter().chain(far)) {
            dst.re = v;
        }
        self.prev_far.copy_from_slice(far);
        self.plan.forward(&mut frame);
        self.spectra.pop_back();
        self.spectra.push_front(frame);

        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for (w, x) in self.weights.iter().zip(&self.spectra) {
            for ((a, wv), xv) in acc.iter_mut().zip(w).zip(x) {
                *a += wv * xv;
            }
        }
        self.plan.inverse(&mut acc);
        let y: Vec<f64> = acc[b..].iter().map(|c| c.re).collect();
        let e: Vec<f64> = mic.iter().zip(&y).map(|(m, yv)| m - yv).collect();

        let parts = self.config.partitions as f64;
        let alpha = self.config.power_smoothing;
        for (p, x) in self.power.iter_mut().zip(&self.spectra[0]) {
            *p = alpha * *p + (1.0 - alpha) * parts * x.norm_sqr();
        }

        if self.should_adapt(far, mic, &y) {
            self.adapt(&e);
            self.adapted_blocks += 1;
        }

        if self.weights.iter().flatten().any(|w| !w.re.is_finite() || !w.im.is_finite()) {
            self.reset();
            return Err(Error::FilterReset);
        }
        // Output selection: a block where the estimate adds energy is passed
        // through unchanged.
        let e_pow: f64 = e.iter().map(|v| v * v).sum();
        let mic_pow: f64 = mic.iter().map(|v| v * v).sum();
        if e_pow > mic_pow {
            return Ok((mic.to_vec(), vec![0.0; b]));
        }
        Ok((e, y))
    }

    fn should_adapt(&mut self, far: &[f64], mic: &[f64], y: &[f64]) -> bool {
        if self.config.step == 0.0 || far.iter().all(|&v| v == 0.0) {
            return false;
        }
        if self.adapted_blocks >= self.config.guard_warmup {
            let mic_pow: f64 = mic.iter().map(|v| v * v).sum();
            let echo_pow: f64 = y.iter().map(|v| v * v).sum();
            if mic_pow > self.config.double_talk_ratio * echo_pow {
                self.frozen_blocks += 1;
                return false;
            }
        }
        true
    }

    fn adapt(&mut self, e: &[f64]) {
        let b = self.config.block;
        let n = 2 * b;
        let mut err = vec![Complex64::new(0.0, 0.0); n];
        for (dst, &v) in err[b..].iter_mut().zip(e) {
            dst.re = v;
        }
        self.plan.forward(&mut err);

        let mean_power = self.power.iter().sum::<f64>() / n as f64;
        let reg = self.config.regularization * mean_power + f64::MIN_POSITIVE;
        let norm: Vec<Complex64> = err
            .iter()
            .zip(&self.power)
            .map(|(ev, p)| ev * (self.config.step / (p + reg)))
            .collect();

        let mut grad = vec![Complex64::new(0.0, 0.0); n];
        for (w, x) in self.weights.iter_mut().zip(&self.spectra) {
            for ((g, xv), nv) in grad.iter_mut().zip(x).zip(&norm) {
                *g = xv.conj() * nv;
            }
            // Constrain the update to a causal `block`-tap segment.
            self.plan.inverse(&mut grad);
            for g in grad[b..].iter_mut() {
                *g = Complex64::new(0.0, 0.0);
            }
            for g in grad[..b].iter_mut() {
                g.im = 0.0;
            }
            self.plan.forward(&mut grad);
            for (wv, g) in w.iter_mut().zip(&grad) {
                *wv += g;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearStageConfig {
    pub nlms: NlmsConfig,
    /// `None` disables delay estimation.
    pub max_lag: Option<usize>,
    /// Samples subtracted from the estimated delay so the filter also covers
    /// the onset of the echo path.
    pub delay_margin: usize,
}

impl Default for LinearStageConfig {
    fn default() -> Self {
        Self {
            nlms: NlmsConfig::default(),
            max_lag: Some(tde::DEFAULT_MAX_LAG),
            delay_margin: 960,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearOutput {
    /// Filter error `e = d − y`.
    pub error: Waveform,
    /// Echo estimate `y`.
    pub echo: Waveform,
    pub delay: DelayEstimate,
    /// Delay actually applied to the far-end reference.
    pub applied_delay: usize,
}

/// Delay estimation, compensation and block NLMS over a whole utterance.
/// Outputs are on the microphone timeline and have the microphone length.
pub fn run_linear_stage(mic: &Waveform, far: &Waveform, config: &LinearStageConfig) -> Result<LinearOutput> {
    if mic.sample_rate() != far.sample_rate() {
        return Err(Error::Config(format!(
            "sample rates differ: mic {} Hz, far {} Hz",
            mic.sample_rate(),
            far.sample_rate()
        )));
    }
    let len = mic.len();
    let far = far.resized(len);

    let delay = match config.max_lag {
        Some(max_lag) if len > 2 => {
            let lag = max_lag.min((len - 1) / 2);
            tde::gcc_phat(mic, &far, lag)?
        }
        _ => DelayEstimate::NONE,
    };
    let applied = DelayEstimate {
        delay: delay.delay.saturating_sub(config.delay_margin),
        confidence: delay.confidence,
    };
    let far = tde::compensate(&far, &applied);

    let b = config.nlms.block;
    let padded = len.div_ceil(b) * b;
    let far_p = far.resized(padded);
    let mic_p = mic.resized(padded);
    let mut state = AdaptiveFilterState::new(config.nlms)?;
    let mut e = Vec::with_capacity(padded);
    let mut y = Vec::with_capacity(padded);
    for (fb, mb) in far_p.samples().chunks(b).zip(mic_p.samples().chunks(b)) {
        match state.process_block(fb, mb) {
            Ok((eb, yb)) => {
                e.extend(eb);
                y.extend(yb);
            }
            Err(Error::FilterReset) => {
                warn!("adaptive filter diverged; state reset");
                e.extend_from_slice(mb);
                y.extend(std::iter::repeat(0.0).take(b));
            }
            Err(err) => return Err(err),
        }
    }
    e.truncate(len);
    y.truncate(len);
    Ok(LinearOutput {
        error: Waveform::new(e, mic.sample_rate())?,
        echo: Waveform::new(y, mic.sample_rate())?,
        delay,
        applied_delay: applied.delay,
    })
}
