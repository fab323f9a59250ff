//! Hermetic stand-ins for speech and noise corpora.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Speech,
    Noise,
}

/// Two-pole resonator with peak gain near 1 at `freq`.
struct Resonator {
    a1: f64,
    a2: f64,
    g: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64, fs: f64) -> Self {
        let r = (-PI * bw / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            g: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn retune(&mut self, freq: f64, bw: f64, fs: f64) {
        let fresh = Self::new(freq, bw, fs);
        self.a1 = fresh.a1;
        self.a2 = fresh.a2;
        self.g = fresh.g;
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.g * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Speech-like signal: a glottal pulse train mixed with breath noise, shaped
/// by two drifting formant resonators and gated into syllables and talk
/// spurts separated by pauses. Peak level is normalized to about −6 dBFS.
pub fn speech_like<R: Rng>(len: usize, fs: u32, rng: &mut R) -> Vec<f64> {
    let fs_f = fs as f64;
    let white = Normal::new(0.0, 1.0).expect("valid normal");
    let mut f1 = Resonator::new(500.0, 120.0, fs_f);
    let mut f2 = Resonator::new(1500.0, 200.0, fs_f);
    let mut out = Vec::with_capacity(len);
    let mut pitch = rng.gen_range(90.0..240.0);
    let mut phase = 0.0f64;
    let mut seg_left = 0usize;
    let mut voiced = true;
    let mut talking = true;
    let mut spurt_left = (rng.gen_range(0.8..2.5) * fs_f) as usize;
    let mut env = 0.0f64;
    let attack = 1.0 - (-1.0 / (0.01 * fs_f)).exp();
    for _ in 0..len {
        if spurt_left == 0 {
            talking = !talking;
            spurt_left = if talking {
                (rng.gen_range(0.8..2.5) * fs_f) as usize
            } else {
                (rng.gen_range(0.2..0.8) * fs_f) as usize
            };
        }
        spurt_left -= 1;
        if seg_left == 0 {
            seg_left = (rng.gen_range(0.08..0.25) * fs_f) as usize;
            voiced = rng.gen_bool(0.75);
            pitch = (pitch * rng.gen_range(0.9..1.1f64)).clamp(80.0, 260.0);
            f1.retune(rng.gen_range(300.0..900.0), 120.0, fs_f);
            f2.retune(rng.gen_range(900.0..2800.0), 200.0, fs_f);
        }
        seg_left -= 1;
        phase += pitch / fs_f;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        let excitation = if voiced { 4.0 * pulse + 0.05 * white.sample(rng) } else { 0.3 * white.sample(rng) };
        let target = if talking { 1.0 } else { 0.0 };
        env += attack * (target - env);
        let y = f1.tick(excitation) + 0.6 * f2.tick(excitation);
        out.push(env * y);
    }
    normalize_peak(&mut out, 0.5);
    out
}

/// Stationary coloured noise: white noise through a one-pole low-pass with a
/// random corner, normalized to −20 dBFS RMS.
pub fn noise_like<R: Rng>(len: usize, fs: u32, rng: &mut R) -> Vec<f64> {
    let white = Normal::new(0.0, 1.0).expect("valid normal");
    let corner = rng.gen_range(300.0..6000.0);
    let a = (-2.0 * PI * corner / fs as f64).exp();
    let mut y = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            y = a * y + (1.0 - a) * white.sample(rng);
            y
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = 0.1 / rms;
        out.iter_mut().for_each(|v| *v *= g);
    }
    out
}

pub fn synthesize<R: Rng>(kind: SynthKind, len: usize, fs: u32, rng: &mut R) -> Vec<f64> {
    match kind {
        SynthKind::Speech => speech_like(len, fs, rng),
        SynthKind::Noise => noise_like(len, fs, rng),
    }
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        let g = peak / m;
        x.iter_mut().for_each(|v| *v *= g);
    }
}
