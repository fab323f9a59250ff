//! Pseudo-QMF cosine-modulated filterbank.
//!
//! A Kaiser-windowed linear-phase lowpass prototype `p` is modulated into
//! `M` analysis filters
//!
//! ```text
//! h_k[n] = 2 p[n] cos((2k+1)·π/(2M)·(n − (L−1)/2) + (−1)^k·π/4)
//! ```
//!
//! and synthesis filters with the phase term negated. Adjacent-band aliasing
//! cancels through the phase choice; the prototype cutoff is tuned so the
//! overall distortion function is as flat as possible. Analysis followed by
//! synthesis delays the signal by `L − 1` full-band samples.

use std::fmt::Write as _;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Stopband attenuation the prototype window is designed for.
pub const STOPBAND_DB: f64 = 80.0;

const RESPONSE_GRID: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct PqmfBank {
    bands: usize,
    prototype: Vec<f64>,
    analysis: Vec<Vec<f64>>,
    synthesis: Vec<Vec<f64>>,
}

/// `M` decimated band signals, lowest band first.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    pub bands: Vec<Waveform>,
}

impl SubbandSet {
    pub fn len(&self) -> usize {
        self.bands.first().map_or(0, Waveform::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(len: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    let m = (len - 1) as f64;
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Kaiser β for a given stopband attenuation in dB.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

fn windowed_sinc(len: usize, cutoff: f64, window: &[f64]) -> Vec<f64> {
    let centre = (len - 1) as f64 / 2.0;
    (0..len)
        .map(|n| {
            let t = n as f64 - centre;
            let x = 2.0 * cutoff * t;
            let sinc = if x.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            2.0 * cutoff * sinc * window[n]
        })
        .collect()
}

fn modulate(prototype: &[f64], bands: usize, sign: f64) -> Vec<Vec<f64>> {
    let len = prototype.len();
    let centre = (len - 1) as f64 / 2.0;
    (0..bands)
        .map(|k| {
            let phase = if k % 2 == 0 { 1.0 } else { -1.0 } * std::f64::consts::FRAC_PI_4 * sign;
            let omega = (2 * k + 1) as f64 * std::f64::consts::PI / (2 * bands) as f64;
            prototype
                .iter()
                .enumerate()
                .map(|(n, &p)| 2.0 * p * (omega * (n as f64 - centre) + phase).cos())
                .collect()
        })
        .collect()
}

fn dtft(taps: &[f64], omega: f64) -> Complex64 {
    let step = Complex64::from_polar(1.0, -omega);
    let mut phasor = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for &h in taps {
        acc += phasor * h;
        phasor *= step;
    }
    acc
}

impl PqmfBank {
    /// Design a bank with `bands` bands and `taps`-tap filters. `transition`
    /// is the normalized transition width (cycles/sample) the prototype must
    /// reach the stopband within.
    pub fn design(bands: usize, taps: usize, transition: f64) -> Result<Self> {
        if bands < 2 {
            return Err(Error::Config("pqmf needs at least two bands".into()));
        }
        if taps == 0 || taps % bands != 0 {
            return Err(Error::Config(format!(
                "pqmf tap count {taps} must be a positive multiple of {bands}"
            )));
        }
        let max_transition = 1.0 / (2 * bands) as f64;
        if !(transition > 0.0 && transition < max_transition) {
            return Err(Error::Config(format!(
                "pqmf transition {transition} outside (0, {max_transition})"
            )));
        }
        // Kaiser's length/attenuation relation.
        let reachable = 2.285 * (taps - 1) as f64 * 2.0 * std::f64::consts::PI * transition + 7.95;
        if reachable < STOPBAND_DB {
            return Err(Error::Design(format!(
                "{taps} taps reach only {reachable:.1} dB within transition {transition}; {STOPBAND_DB} dB required"
            )));
        }
        let window = kaiser(taps, kaiser_beta(STOPBAND_DB));
        let nominal = 1.0 / (4 * bands) as f64;
        let objective = |cutoff: f64| {
            let proto = windowed_sinc(taps, cutoff, &window);
            Self::from_prototype_unchecked(bands, proto).composite_ripple_db()
        };

        // Golden-section search over the cutoff.
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (nominal - transition / 2.0, nominal + transition / 2.0);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (objective(c), objective(d));
        for _ in 0..60 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = objective(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = objective(d);
            }
            if (b - a).abs() < 1e-10 {
                break;
            }
        }
        let cutoff = (a + b) / 2.0;
        let proto = windowed_sinc(taps, cutoff, &window);
        let bank = Self::from_prototype_unchecked(bands, proto);
        // Unit mean distortion gain.
        let gain = bank.mean_composite_gain();
        let proto: Vec<f64> = bank.prototype.iter().map(|p| p / gain.sqrt()).collect();
        Ok(Self::from_prototype_unchecked(bands, proto))
    }

    /// Four bands, 64 taps, designed once per process.
    pub fn default_bank() -> Self {
        static BANK: OnceLock<PqmfBank> = OnceLock::new();
        BANK.get_or_init(|| Self::design(4, 64, 0.1).expect("default pqmf design is feasible"))
            .clone()
    }

    pub fn from_prototype(bands: usize, prototype: Vec<f64>) -> Result<Self> {
        if bands < 2 || prototype.is_empty() || prototype.len() % bands != 0 {
            return Err(Error::Config(format!(
                "prototype of {} taps is incompatible with {bands} bands",
                prototype.len()
            )));
        }
        if prototype.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pqmf prototype".into()));
        }
        Ok(Self::from_prototype_unchecked(bands, prototype))
    }

    fn from_prototype_unchecked(bands: usize, prototype: Vec<f64>) -> Self {
        Self {
            analysis: modulate(&prototype, bands, 1.0),
            synthesis: modulate(&prototype, bands, -1.0),
            bands,
            prototype,
        }
    }

    pub fn num_bands(&self) -> usize {
        self.bands
    }

    pub fn prototype(&self) -> &[f64] {
        &self.prototype
    }

    pub fn analysis_filters(&self) -> &[Vec<f64>] {
        &self.analysis
    }

    pub fn synthesis_filters(&self) -> &[Vec<f64>] {
        &self.synthesis
    }

    /// Analysis-to-synthesis delay in full-band samples.
    pub fn latency(&self) -> usize {
        self.prototype.len() - 1
    }

    /// Distortion function `T(ω) = Σ_k F_k(ω)·H_k(ω)` with the synthesis
    /// gain `M` folded in against the `1/M` of upsampling.
    pub fn composite_response(&self, omega: f64) -> Complex64 {
        self.analysis
            .iter()
            .zip(&self.synthesis)
            .map(|(h, f)| dtft(h, omega) * dtft(f, omega))
            .sum()
    }

    fn composite_magnitudes(&self) -> Vec<f64> {
        (0..=RESPONSE_GRID)
            .map(|i| {
                let omega = std::f64::consts::PI * i as f64 / RESPONSE_GRID as f64;
                self.composite_response(omega).norm()
            })
            .collect()
    }

    fn mean_composite_gain(&self) -> f64 {
        let mags = self.composite_magnitudes();
        mags.iter().sum::<f64>() / mags.len() as f64
    }

    /// Worst-case deviation of `|T(ω)|` from its mean, in dB.
    pub fn composite_ripple_db(&self) -> f64 {
        let mags = self.composite_magnitudes();
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        mags.iter()
            .map(|m| (20.0 * (m / mean).log10()).abs())
            .fold(0.0, f64::max)
    }

    /// Filter with each analysis filter and keep every `M`-th sample.
    pub fn analyze(&self, w: &Waveform) -> Result<SubbandSet> {
        let m = self.bands;
        if w.sample_rate() % m as u32 != 0 {
            return Err(Error::Config(format!(
                "sample rate {} is not divisible by {m} bands",
                w.sample_rate()
            )));
        }
        let x = w.samples();
        let out_len = x.len().div_ceil(m);
        let rate = w.sample_rate() / m as u32;
        let bands = self
            .analysis
            .iter()
            .map(|h| {
                let y = (0..out_len)
                    .map(|j| {
                        let n = j * m;
                        let taps = h.len().min(n + 1);
                        (0..taps).map(|i| h[i] * x[n - i]).sum()
                    })
                    .collect();
                Waveform::new(y, rate)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SubbandSet { bands })
    }

    /// Zero-insertion upsampling, synthesis filtering and summation.
    pub fn synthesize(&self, s: &SubbandSet) -> Result<Waveform> {
        let m = self.bands;
        if s.bands.len() != m {
            return Err(Error::Shape(format!(
                "expected {m} bands, got {}",
                s.bands.len()
            )));
        }
        let len = s.len();
        if s.bands.iter().any(|b| b.len() != len) {
            return Err(Error::Shape("sub-band lengths differ".into()));
        }
        let rate = s.bands[0].sample_rate() * m as u32;
        let mut out = vec![0.0; len * m];
        let gain = m as f64;
        for (band, f) in s.bands.iter().zip(&self.synthesis) {
            for (j, &v) in band.samples().iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let base = j * m;
                for (i, &c) in f.iter().enumerate() {
                    if base + i >= out.len() {
                        break;
                    }
                    out[base + i] += gain * c * v;
                }
            }
        }
        Waveform::new(out, rate)
    }

    /// One tap per line, full precision.
    pub fn prototype_to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.prototype {
            writeln!(s, "{v:e}").expect("writing to String");
        }
        s
    }

    pub fn prototype_from_text(bands: usize, text: &str) -> Result<Self> {
        let taps = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad prototype tap {l:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_prototype(bands, taps)
    }
}

/// Block-streaming analysis with per-stream FIR history.
#[derive(Debug, Clone)]
pub struct StreamingAnalysis {
    bank: PqmfBank,
    history: Vec<f64>,
}

impl StreamingAnalysis {
    pub fn new(bank: PqmfBank) -> Self {
        let hist = bank.prototype.len() - 1;
        Self {
            history: vec![0.0; hist],
            bank,
        }
    }

    /// `block.len()` must be a multiple of the band count. Returns one
    /// sample vector per band.
    pub fn process(&mut self, block: &[f64]) -> Result<Vec<Vec<f64>>> {
        let m = self.bank.bands;
        if block.len() % m != 0 {
            return Err(Error::Shape(format!(
                "streaming block of {} samples is not a multiple of {m}",
                block.len()
            )));
        }
        let hist = self.history.len();
        let mut buf = std::mem::take(&mut self.history);
        buf.extend_from_slice(block);
        let out = self
            .bank
            .analysis
            .iter()
            .map(|h| {
                (0..block.len() / m)
                    .map(|j| {
                        let n = hist + j * m;
                        h.iter().enumerate().map(|(i, c)| c * buf[n - i]).sum()
                    })
                    .collect()
            })
            .collect();
        self.history = buf[buf.len() - hist..].to_vec();
        Ok(out)
    }
}

/// Block-streaming synthesis with an overlap-add tail.
#[derive(Debug, Clone)]
pub struct StreamingSynthesis {
    bank: PqmfBank,
    tail: Vec<f64>,
}

impl StreamingSynthesis {
    pub fn new(bank: PqmfBank) -> Self {
        let len = bank.prototype.len();
        Self {
            tail: vec![0.0; len],
            bank,
        }
    }

    pub fn process(&mut self, bands: &[Vec<f64>]) -> Result<Vec<f64>> {
        let m = self.bank.bands;
        if bands.len() != m {
            return Err(Error::Shape(format!("expected {m} bands, got {}", bands.len())));
        }
        let sub_len = bands[0].len();
        if bands.iter().any(|b| b.len() != sub_len) {
            return Err(Error::Shape("sub-band block lengths differ".into()));
        }
        let taps = self.bank.prototype.len();
        let out_len = sub_len * m;
        let mut acc = vec![0.0; out_len + taps];
        acc[..self.tail.len()].copy_from_slice(&self.tail);
        let gain = m as f64;
        for (band, f) in bands.iter().zip(&self.bank.synthesis) {
            for (j, &v) in band.iter().enumerate() {
                let base = j * m;
                for (i, &c) in f.iter().enumerate() {
                    acc[base + i] += gain * c * v;
                }
            }
        }
        self.tail = acc[out_len..out_len + taps].to_vec();
        acc.truncate(out_len);
        Ok(acc)
    }
}
