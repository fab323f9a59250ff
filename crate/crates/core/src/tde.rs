//! Far-end/microphone delay estimation with GCC-PHAT.
//!
//! A positive delay means the microphone signal lags the far-end reference,
//! which is the physical situation for loudspeaker echo. Compensation delays
//! the far-end reference by that amount so the two line up.

use std::collections::VecDeque;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{FftPlan, Waveform};

/// Default search range: one second at 48 kHz.
pub const DEFAULT_MAX_LAG: usize = 48_000;

const WHITENING_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    /// Samples by which the microphone lags the far-end signal.
    pub delay: usize,
    /// Correlation peak divided by the mean correlation magnitude over the
    /// searched lags. Zero for degenerate input.
    pub confidence: f64,
}

impl DelayEstimate {
    pub const NONE: DelayEstimate = DelayEstimate {
        delay: 0,
        confidence: 0.0,
    };
}

/// Whole-signal GCC-PHAT. Searches lags `0..=max_lag`.
pub fn gcc_phat(mic: &Waveform, far: &Waveform, max_lag: usize) -> Result<DelayEstimate> {
    if mic.sample_rate() != far.sample_rate() {
        return Err(Error::Config(format!(
            "sample rates differ: mic {} Hz, far {} Hz",
            mic.sample_rate(),
            far.sample_rate()
        )));
    }
    let len = mic.len().max(far.len());
    if len <= 2 * max_lag {
        return Err(Error::Config(format!(
            "signals of {len} samples are too short for max_lag {max_lag}"
        )));
    }
    Ok(gcc_phat_raw(mic.samples(), far.samples(), max_lag))
}

pub(crate) fn gcc_phat_raw(mic: &[f64], far: &[f64], max_lag: usize) -> DelayEstimate {
    let silent = |x: &[f64]| x.iter().all(|&v| v == 0.0);
    if silent(mic) || silent(far) {
        return DelayEstimate::NONE;
    }
    let size = (mic.len() + far.len()).next_power_of_two();
    let plan = FftPlan::new(size).expect("non-zero size");
    let xm = plan.forward_real(mic);
    let xf = plan.forward_real(far);
    let mut cross: Vec<Complex64> = xm
        .iter()
        .zip(&xf)
        .map(|(a, b)| {
            let c = a * b.conj();
            c / c.norm().max(WHITENING_FLOOR)
        })
        .collect();
    plan.inverse(&mut cross);

    let lags = max_lag.min(size - 1);
    let mut best = 0;
    let mut peak = f64::NEG_INFINITY;
    let mut abs_sum = 0.0;
    for (k, c) in cross.iter().enumerate().take(lags + 1) {
        if c.re > peak {
            peak = c.re;
            best = k;
        }
        abs_sum += c.re.abs();
    }
    let mean = abs_sum / (lags + 1) as f64;
    if !(mean > 0.0) || !peak.is_finite() {
        return DelayEstimate::NONE;
    }
    DelayEstimate {
        delay: best,
        confidence: peak / mean,
    }
}

/// Delay the far-end reference by `estimate.delay` samples. The head is
/// zero-filled and the length is preserved.
pub fn compensate(far: &Waveform, estimate: &DelayEstimate) -> Waveform {
    let mut out = Waveform::zeros(far.len(), far.sample_rate());
    let d = estimate.delay.min(far.len());
    out.samples_mut()[d..].copy_from_slice(&far.samples()[..far.len() - d]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamingTdeConfig {
    pub max_lag: usize,
    /// Analysis buffer length in samples.
    pub buffer: usize,
    /// Re-estimation cadence in samples.
    pub interval: usize,
    /// Minimum confidence for accepting a new estimate.
    pub min_confidence: f64,
    /// A new estimate must differ by more than this many samples.
    pub hysteresis: usize,
}

impl Default for StreamingTdeConfig {
    fn default() -> Self {
        Self {
            max_lag: DEFAULT_MAX_LAG,
            buffer: 4 * 48_000,
            interval: 48_000,
            min_confidence: 2.0,
            hysteresis: 48,
        }
    }
}

/// Sliding-buffer delay tracker for block streaming.
#[derive(Debug, Clone)]
pub struct StreamingTde {
    config: StreamingTdeConfig,
    mic: VecDeque<f64>,
    far: VecDeque<f64>,
    since_update: usize,
    current: DelayEstimate,
}

impl StreamingTde {
    pub fn new(config: StreamingTdeConfig) -> Result<Self> {
        if config.buffer <= 2 * config.max_lag || config.interval == 0 {
            return Err(Error::Config(
                "streaming tde buffer must exceed 2*max_lag and interval must be positive".into(),
            ));
        }
        Ok(Self {
            mic: VecDeque::with_capacity(config.buffer),
            far: VecDeque::with_capacity(config.buffer),
            config,
            since_update: 0,
            current: DelayEstimate::NONE,
        })
    }

    pub fn current(&self) -> DelayEstimate {
        self.current
    }

    /// Push one block of both signals; returns the delay in effect.
    pub fn push(&mut self, mic: &[f64], far: &[f64]) -> DelayEstimate {
        for (buf, block) in [(&mut self.mic, mic), (&mut self.far, far)] {
            buf.extend(block.iter().copied());
            while buf.len() > self.config.buffer {
                buf.pop_front();
            }
        }
        self.since_update += mic.len();
        if self.since_update >= self.config.interval && self.mic.len() == self.config.buffer {
            self.since_update = 0;
            let m: Vec<f64> = self.mic.iter().copied().collect();
            let f: Vec<f64> = self.far.iter().copied().collect();
            let est = gcc_phat_raw(&m, &f, self.config.max_lag);
            let moved = est.delay.abs_diff(self.current.delay) > self.config.hysteresis;
            if est.confidence > self.config.min_confidence && (moved || self.current.confidence == 0.0)
            {
                self.current = est;
            }
        }
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn white(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn delayed(x: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        out[k..].copy_from_slice(&x[..x.len() - k]);
        out
    }

    /// Brute-force normalized cross-correlation over the lag range.
    fn ncc_argmax(mic: &[f64], far: &[f64], max_lag: usize) -> usize {
        (0..=max_lag)
            .map(|k| {
                let n = mic.len() - k;
                let dot: f64 = (0..n).map(|i| mic[i + k] * far[i]).sum();
                let em: f64 = mic[k..].iter().map(|v| v * v).sum();
                let ef: f64 = far[..n].iter().map(|v| v * v).sum();
                (k, dot / (em * ef).sqrt().max(1e-300))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    fn wf(x: Vec<f64>) -> Waveform {
        Waveform::new(x, 48_000).unwrap()
    }

    #[test]
    fn identical_signals_zero_delay() {
        let x = white(4000, 1);
        let est = gcc_phat(&wf(x.clone()), &wf(x), 1000).unwrap();
        assert_eq!(est.delay, 0);
        assert!(est.confidence > 2.0);
    }

    #[test]
    fn shift_with_noise_matches_oracle() {
        let far = white(6000, 2);
        let noise = white(6000, 3);
        let mut mic = delayed(&far, 480);
        let gain = 0.1; // 20 dB below the (equal-variance) signal
        for (m, n) in mic.iter_mut().zip(&noise) {
            *m += gain * n;
        }
        let oracle = ncc_argmax(&mic, &far, 1000);
        assert_eq!(oracle, 480);
        let est = gcc_phat(&wf(mic), &wf(far), 1000).unwrap();
        assert_eq!(est.delay, oracle);
    }

    #[test]
    fn long_delay() {
        let far = white(48_000 * 2 - 2000, 4);
        let far = {
            let mut v = far;
            v.resize(48_000 * 2, 0.0);
            v
        };
        let mic = delayed(&far, 21_600);
        let est = gcc_phat(&wf(mic), &wf(far), 45_000).unwrap();
        assert_eq!(est.delay, 21_600);
    }

    #[test]
    fn silent_input_is_degenerate() {
        let est = gcc_phat(&wf(vec![0.0; 100]), &wf(white(100, 1)), 10).unwrap();
        assert_eq!(est, DelayEstimate::NONE);
    }

    #[test]
    fn too_short_rejected() {
        assert!(gcc_phat(&wf(white(100, 1)), &wf(white(100, 2)), 50).is_err());
    }

    #[test]
    fn noiseless_shifts_recovered_and_scale_invariant() {
        let far = white(512, 9);
        for k in 0..=100 {
            let mic = delayed(&far, k);
            let est = gcc_phat(&wf(mic.clone()), &wf(far.clone()), 100).unwrap();
            assert_eq!(est.delay, k);
            let scaled: Vec<f64> = mic.iter().map(|v| v * 37.0).collect();
            let est2 = gcc_phat(&wf(scaled), &wf(far.clone()), 100).unwrap();
            assert_eq!(est2.delay, k);
        }
    }

    #[test]
    fn compensate_shifts_and_realigns() {
        let far = wf(white(4000, 5));
        assert_eq!(compensate(&far, &DelayEstimate::NONE), far);

        let mut imp = vec![0.0; 10];
        imp[0] = 1.0;
        let out = compensate(&wf(imp), &DelayEstimate { delay: 5, confidence: 1.0 });
        assert_eq!(out.samples()[5], 1.0);
        assert_eq!(out.samples().iter().sum::<f64>(), 1.0);

        let mic = wf(delayed(far.samples(), 300));
        let est = gcc_phat(&mic, &far, 1000).unwrap();
        let aligned = compensate(&far, &est);
        let residual = gcc_phat(&mic, &aligned, 1000).unwrap();
        assert_eq!(residual.delay, 0);
    }

    #[test]
    fn streaming_tracks_with_hysteresis() {
        let cfg = StreamingTdeConfig {
            max_lag: 2000,
            buffer: 8000,
            interval: 2000,
            min_confidence: 2.0,
            hysteresis: 48,
        };
        let mut tde = StreamingTde::new(cfg).unwrap();
        let far = white(40_000, 6);
        let mic = delayed(&far, 700);
        let mut last = DelayEstimate::NONE;
        for (m, f) in mic.chunks(480).zip(far.chunks(480)) {
            last = tde.push(m, f);
        }
        assert_eq!(last.delay, 700);

        // A small drift inside the hysteresis band does not move the estimate.
        let mic2 = delayed(&far, 720);
        for (m, f) in mic2.chunks(480).zip(far.chunks(480)) {
            last = tde.push(m, f);
        }
        assert_eq!(last.delay, 700);
    }
}
