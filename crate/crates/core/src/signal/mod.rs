//! Audio containers, windows, FFT and STFT shared by every stage.

pub mod fft;
pub mod stft;
pub mod wav;

pub use fft::{fft, ifft, FftPlan};
pub use wav::{read_wav, read_wav_at, write_wav, WavFormat};
pub use stft::{istft, stft, Spectrogram, StftConfig, StreamingIstft, StreamingStft, Window};

use crate::error::{Error, Result};

/// Primary full-band rate of the system.
pub const FULLBAND_RATE: u32 = 48_000;

/// Mono waveform, full scale ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        assert!(sample_rate > 0);
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean power `Σx²/N`; zero for an empty waveform.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Truncate or zero-pad to `len` samples.
    pub fn resized(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Signal-to-noise ratio of `estimate` against `reference` in dB.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let sig: f64 = reference.iter().map(|v| v * v).sum();
    let err: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    10.0 * (sig / err.max(1e-300)).log10()
}

/// Full linear convolution.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let n = x.len() + h.len() - 1;
    // Direct form is fine for short kernels.
    if h.len().min(x.len()) <= 64 {
        let mut out = vec![0.0; n];
        for (i, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (j, &hv) in h.iter().enumerate() {
                out[i + j] += xv * hv;
            }
        }
        return out;
    }
    let size = n.next_power_of_two();
    let plan = FftPlan::new(size).expect("non-zero size");
    let xf = plan.forward_real(x);
    let hf = plan.forward_real(h);
    let mut prod: Vec<_> = xf.iter().zip(&hf).map(|(a, b)| a * b).collect();
    plan.inverse(&mut prod);
    prod.truncate(n);
    prod.into_iter().map(|c| c.re).collect()
}
