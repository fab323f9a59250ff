//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! Frame `t` covers samples `[t·hop, t·hop + win)`. Each frame is windowed,
//! zero-padded to `fft_size` and transformed; only bins `0..fft_size/2` are
//! kept, so the Nyquist bin is dropped. Synthesis recovers the missing
//! Nyquist coefficient from the zero-padded tail of each frame (least
//! squares over the padded samples), which makes the round trip exact
//! whenever `win < fft_size`.

use num_complex::Complex64;

use super::{FftPlan, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Square root of the periodic Hann window; used for both analysis and
    /// synthesis.
    SqrtHann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..len)
                .map(|n| {
                    let c = (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos();
                    (0.5 * (1.0 - c)).max(0.0).sqrt()
                })
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub win: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl StftConfig {
    /// 20 ms / 10 ms framing at the 12 kHz sub-band rate, zero-padded to 256.
    pub const SUBBAND: StftConfig = StftConfig {
        win: 240,
        hop: 120,
        fft_size: 256,
        window: Window::SqrtHann,
    };

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win || self.win > self.fft_size {
            return Err(Error::Config(format!(
                "stft sizes must satisfy 0 < hop <= win <= fft_size (hop={}, win={}, fft={})",
                self.hop, self.win, self.fft_size
            )));
        }
        if self.fft_size % 2 != 0 {
            return Err(Error::Config("fft_size must be even".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.win {
            0
        } else {
            (len - self.win) / self.hop + 1
        }
    }

    /// Overlap-add gain `Σ_k w_a·w_s` at steady state.
    pub fn cola_gain(&self) -> f64 {
        let w = self.window.coefficients(self.win);
        let mut acc = 0.0;
        for n in 0..self.hop {
            let mut s = 0.0;
            let mut i = n;
            while i < self.win {
                s += w[i] * w[i];
                i += self.hop;
            }
            acc += s;
        }
        acc / self.hop as f64
    }
}

/// One-sided complex spectrogram stored row-major as `[frames × bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Vec<Complex64>,
    pub frames: usize,
    pub freq: usize,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn zeros(frames: usize, config: StftConfig, sample_rate: u32) -> Self {
        Self {
            bins: vec![Complex64::new(0.0, 0.0); frames * config.bins()],
            frames,
            freq: config.bins(),
            config,
            sample_rate,
        }
    }

    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        self.bins[t * self.freq + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.bins[t * self.freq..(t + 1) * self.freq]
    }
}

pub fn stft(w: &Waveform, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    if w.len() < config.win {
        return Err(Error::Config(format!(
            "waveform of {} samples is shorter than the {}-sample window",
            w.len(),
            config.win
        )));
    }
    let frames = config.num_frames(w.len());
    let window = config.window.coefficients(config.win);
    let plan = FftPlan::new(config.fft_size)?;
    let freq = config.bins();
    let mut bins = Vec::with_capacity(frames * freq);
    let mut buf = vec![Complex64::new(0.0, 0.0); config.fft_size];
    let x = w.samples();
    for t in 0..frames {
        let start = t * config.hop;
        buf.fill(Complex64::new(0.0, 0.0));
        for n in 0..config.win {
            buf[n].re = x[start + n] * window[n];
        }
        plan.forward(&mut buf);
        bins.extend_from_slice(&buf[..freq]);
    }
    Ok(Spectrogram {
        bins,
        frames,
        freq,
        config: *config,
        sample_rate: w.sample_rate(),
    })
}

/// Inverse transform of one truncated one-sided frame back to `win` samples.
pub(crate) fn frame_to_time(
    half: &[Complex64],
    config: &StftConfig,
    plan: &FftPlan,
    buf: &mut [Complex64],
) -> Vec<f64> {
    let n = config.fft_size;
    let nyq = n / 2;
    buf.fill(Complex64::new(0.0, 0.0));
    for (k, &v) in half.iter().enumerate().take(nyq) {
        buf[k] = v;
        if k > 0 {
            buf[n - k] = v.conj();
        }
    }
    // Hermitian completion: the DC term must be real.
    buf[0].im = 0.0;
    plan.inverse(buf);
    let mut time: Vec<f64> = buf.iter().map(|c| c.re).collect();
    if half.len() <= nyq && config.win < n {
        // x = x̃ + (X_nyq/N)(-1)^n must vanish on the padded tail.
        let mut acc = 0.0;
        for (i, v) in time.iter().enumerate().skip(config.win) {
            acc += if i % 2 == 0 { *v } else { -*v };
        }
        let coef = -acc / (n - config.win) as f64;
        for (i, v) in time.iter_mut().enumerate() {
            *v += if i % 2 == 0 { coef } else { -coef };
        }
    }
    time.truncate(config.win);
    time
}

pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    let config = s.config;
    config.validate()?;
    if s.freq != config.bins() || s.bins.len() != s.frames * s.freq {
        return Err(Error::Shape(format!(
            "spectrogram holds {} values for {}x{} (expected {} bins per frame)",
            s.bins.len(),
            s.frames,
            s.freq,
            config.bins()
        )));
    }
    if s.frames == 0 {
        return Waveform::new(Vec::new(), s.sample_rate);
    }
    let len = (s.frames - 1) * config.hop + config.win;
    let mut out = vec![0.0; len];
    let window = config.window.coefficients(config.win);
    let gain = 1.0 / config.cola_gain();
    let plan = FftPlan::new(config.fft_size)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); config.fft_size];
    for t in 0..s.frames {
        let frame = frame_to_time(s.frame(t), &config, &plan, &mut buf);
        let start = t * config.hop;
        for n in 0..config.win {
            out[start + n] += frame[n] * window[n] * gain;
        }
    }
    Waveform::new(out, s.sample_rate)
}

/// Frame-synchronous analysis: each call takes `hop` new samples and returns
/// one frame of bins. The first frame sees `win − hop` zeros of history, so
/// frame `k` equals frame `k` of [`stft`] on the input with `win − hop`
/// zeros prepended.
#[derive(Debug, Clone)]
pub struct StreamingStft {
    config: StftConfig,
    window: Vec<f64>,
    history: Vec<f64>,
    plan: FftPlan,
    buf: Vec<Complex64>,
}

impl StreamingStft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            window: config.window.coefficients(config.win),
            history: vec![0.0; config.win],
            plan: FftPlan::new(config.fft_size)?,
            buf: vec![Complex64::new(0.0, 0.0); config.fft_size],
            config,
        })
    }

    pub fn push(&mut self, hop: &[f64]) -> Result<Vec<Complex64>> {
        let h = self.config.hop;
        if hop.len() != h {
            return Err(Error::Shape(format!("expected {h} new samples, got {}", hop.len())));
        }
        self.history.copy_within(h.., 0);
        let keep = self.config.win - h;
        self.history[keep..].copy_from_slice(hop);
        self.buf.fill(Complex64::new(0.0, 0.0));
        for (b, (x, w)) in self.buf.iter_mut().zip(self.history.iter().zip(&self.window)) {
            b.re = x * w;
        }
        self.plan.forward(&mut self.buf);
        Ok(self.buf[..self.config.bins()].to_vec())
    }

    pub fn reset(&mut self) {
        self.history.fill(0.0);
    }
}

/// Frame-synchronous overlap-add: each frame yields `hop` finished samples,
/// delayed by `win − hop` relative to the input of [`StreamingStft`].
#[derive(Debug, Clone)]
pub struct StreamingIstft {
    config: StftConfig,
    window: Vec<f64>,
    gain: f64,
    acc: Vec<f64>,
    plan: FftPlan,
    buf: Vec<Complex64>,
}

impl StreamingIstft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            window: config.window.coefficients(config.win),
            gain: 1.0 / config.cola_gain(),
            acc: vec![0.0; config.win],
            plan: FftPlan::new(config.fft_size)?,
            buf: vec![Complex64::new(0.0, 0.0); config.fft_size],
            config,
        })
    }

    pub fn push(&mut self, frame: &[Complex64]) -> Result<Vec<f64>> {
        if frame.len() != self.config.bins() {
            return Err(Error::Shape(format!(
                "expected {} bins, got {}",
                self.config.bins(),
                frame.len()
            )));
        }
        let time = frame_to_time(frame, &self.config, &self.plan, &mut self.buf);
        for ((a, t), w) in self.acc.iter_mut().zip(&time).zip(&self.window) {
            *a += t * w * self.gain;
        }
        let h = self.config.hop;
        let out = self.acc[..h].to_vec();
        self.acc.copy_within(h.., 0);
        let n = self.acc.len();
        self.acc[n - h..].fill(0.0);
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.acc.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::snr_db;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 12_000).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let w = Waveform::zeros(1000, 12_000);
        let s = stft(&w, &StftConfig::SUBBAND).unwrap();
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
        let back = istft(&s).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
        let empty = Spectrogram::zeros(3, StftConfig::SUBBAND, 12_000);
        assert!(istft(&empty).unwrap().samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count() {
        let s = stft(&noise(12_000, 1), &StftConfig::SUBBAND).unwrap();
        assert_eq!(s.frames, 99);
        assert_eq!(s.freq, 128);
    }

    #[test]
    fn bin_centred_sine_concentrates() {
        let cfg = StftConfig {
            win: 256,
            hop: 128,
            fft_size: 256,
            window: Window::Rectangular,
        };
        let k = 10.0;
        let x: Vec<f64> = (0..1024)
            .map(|n| (2.0 * std::f64::consts::PI * k * n as f64 / 256.0).sin())
            .collect();
        let s = stft(&Waveform::new(x, 12_000).unwrap(), &cfg).unwrap();
        for t in 0..s.frames {
            let total: f64 = s.frame(t).iter().map(|c| c.norm_sqr()).sum();
            let peak = s.at(t, 10).norm_sqr();
            assert!(peak / total >= 0.99);
        }
    }

    #[test]
    fn round_trip_interior() {
        let w = noise(12_000, 2);
        let back = istft(&stft(&w, &StftConfig::SUBBAND).unwrap()).unwrap();
        let (a, b) = (240, back.len() - 240);
        let snr = snr_db(&w.samples()[a..b], &back.samples()[a..b]);
        assert!(snr >= 60.0, "snr {snr}");
    }

    #[test]
    fn single_frame_reproduces_windowed_frame() {
        let cfg = StftConfig::SUBBAND;
        let w = noise(cfg.win, 4);
        let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
        let win = cfg.window.coefficients(cfg.win);
        let gain = cfg.cola_gain();
        for n in 0..cfg.win {
            let expect = w.samples()[n] * win[n] * win[n] / gain;
            assert!((back.samples()[n] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_sizes() {
        let bad = StftConfig {
            win: 300,
            hop: 120,
            fft_size: 256,
            window: Window::SqrtHann,
        };
        assert!(stft(&noise(1000, 0), &bad).is_err());
        assert!(stft(&noise(100, 0), &StftConfig::SUBBAND).is_err());
    }

    #[test]
    fn linearity() {
        let x = noise(2000, 5);
        let y = noise(2000, 6);
        let combo: Vec<f64> = x
            .samples()
            .iter()
            .zip(y.samples())
            .map(|(a, b)| 0.7 * a - 1.3 * b)
            .collect();
        let cfg = StftConfig::SUBBAND;
        let sx = stft(&x, &cfg).unwrap();
        let sy = stft(&y, &cfg).unwrap();
        let sc = stft(&Waveform::new(combo, 12_000).unwrap(), &cfg).unwrap();
        for i in 0..sc.bins.len() {
            let expect = sx.bins[i] * 0.7 - sy.bins[i] * 1.3;
            assert!((sc.bins[i] - expect).norm() < 1e-9);
        }
    }
}
