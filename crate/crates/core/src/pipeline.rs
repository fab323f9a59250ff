//! The full cascade: delay estimation and NLMS on the full-band signals,
//! PQMF analysis into four 12 kHz bands, STFT, the neural post-filter, and
//! the inverse path back to 48 kHz.
//!
//! Offline processing runs the linear stage over the whole file and then
//! feeds the post-filter in blocks through the same streaming components
//! used for real-time operation, so both paths share one latency account.
//! The output is shifted back by that latency and aligned with the mic.

use std::path::PathBuf;
use std::time::Instant;

use log::warn;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::datagen::mix::{LABEL_FRAME, LABEL_HOP};
use crate::datagen::synth::{noise_like, speech_like};
use crate::error::{Error, Result};
use crate::linear::{run_linear_stage, AdaptiveFilterState, LinearOutput, LinearStageConfig};
use crate::pqmf::{PqmfBank, StreamingAnalysis, StreamingSynthesis};
use crate::signal::{convolve, StftConfig, StreamingIstft, StreamingStft, Waveform, FULLBAND_RATE};
use crate::stfgcrn::{Stfgcrn, StreamingPostFilter};
use crate::tde::{StreamingTde, StreamingTdeConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub linear: LinearStageConfig,
    /// Delay tracking in streaming mode.
    pub streaming_tde: StreamingTdeConfig,
    pub bands: usize,
    pub pqmf_taps: usize,
    /// Prototype transition width, in units of the band spacing.
    pub pqmf_transition: f64,
    pub stft: StftConfig,
    pub checkpoint: Option<PathBuf>,
    /// Skip the post-filter; the output is the NLMS error signal.
    pub linear_only: bool,
    /// Skip delay estimation and NLMS; the post-filter sees `E = D`, `Y = 0`.
    pub neural_only: bool,
    /// Frames per network call in offline mode.
    pub offline_chunk: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            linear: LinearStageConfig::default(),
            streaming_tde: StreamingTdeConfig::default(),
            bands: 4,
            pqmf_taps: 64,
            pqmf_transition: 0.1,
            stft: StftConfig::SUBBAND,
            checkpoint: None,
            linear_only: false,
            neural_only: false,
            offline_chunk: 25,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.linear.nlms.validate()?;
        self.stft.validate()?;
        if self.bands < 2 || FULLBAND_RATE % self.bands as u32 != 0 {
            return Err(Error::Config(format!("{} bands do not divide {FULLBAND_RATE} Hz", self.bands)));
        }
        if self.linear_only && self.neural_only {
            return Err(Error::Config("linear-only and neural-only are mutually exclusive".into()));
        }
        if self.offline_chunk == 0 {
            return Err(Error::Config("offline chunk must be at least one frame".into()));
        }
        let step = self.bands * self.stft.hop;
        if self.linear.nlms.block % step != 0 {
            return Err(Error::Config(format!(
                "nlms block {} is not a multiple of the {step}-sample post-filter hop",
                self.linear.nlms.block
            )));
        }
        Ok(())
    }

    pub fn bank(&self) -> Result<PqmfBank> {
        if (self.bands, self.pqmf_taps, self.pqmf_transition) == (4, 64, 0.1) {
            Ok(PqmfBank::default_bank())
        } else {
            PqmfBank::design(self.bands, self.pqmf_taps, self.pqmf_transition)
        }
    }
}

/// Sub-band spectra of one signal: per band, `frames × bins` row-major.
pub type BandSpectra = Vec<Vec<Complex64>>;

/// Analysis half of the post-filter: PQMF split and frame-synchronous STFT
/// of one signal.
#[derive(Debug, Clone)]
struct Analyzer {
    pqmf: StreamingAnalysis,
    stft: Vec<StreamingStft>,
}

impl Analyzer {
    fn new(bank: &PqmfBank, stft: StftConfig) -> Result<Self> {
        Ok(Self {
            pqmf: StreamingAnalysis::new(bank.clone()),
            stft: (0..bank.num_bands()).map(|_| StreamingStft::new(stft)).collect::<Result<_>>()?,
        })
    }

    /// `block` covers whole hops; returns per band `frames × bins`.
    fn push(&mut self, block: &[f64], hop: usize) -> Result<BandSpectra> {
        let bands = self.pqmf.process(block)?;
        bands
            .iter()
            .zip(&mut self.stft)
            .map(|(x, st)| {
                let mut frames = Vec::new();
                for chunk in x.chunks(hop) {
                    frames.extend(st.push(chunk)?);
                }
                Ok(frames)
            })
            .collect()
    }
}

/// Sub-band spectra of a whole signal with the framing the post-filter
/// uses. The signal is zero-padded to a whole number of hops.
pub fn subband_spectra(x: &[f64], config: &PipelineConfig) -> Result<BandSpectra> {
    let bank = config.bank()?;
    let step = config.bands * config.stft.hop;
    let mut padded = x.to_vec();
    padded.resize(x.len().div_ceil(step) * step, 0.0);
    Analyzer::new(&bank, config.stft)?.push(&padded, config.stft.hop)
}

/// Network input `[bands, 6, frames, bins]`: real and imaginary parts of the
/// microphone, NLMS error and NLMS echo estimate.
pub fn feature_tensor(d: &BandSpectra, e: &BandSpectra, y: &BandSpectra, bins: usize) -> Result<Tensor<f32>> {
    let bands = d.len();
    let frames = d.first().map_or(0, |b| b.len() / bins);
    let plane = frames * bins;
    let mut data = Vec::with_capacity(bands * 6 * plane);
    for b in 0..bands {
        for sig in [d, e, y] {
            data.extend(sig[b].iter().map(|c| c.re as f32));
            data.extend(sig[b].iter().map(|c| c.im as f32));
        }
    }
    Tensor::new(&[bands, 6, frames, bins], data)
}

/// Streaming post-filter from full-band `(d, e, y)` blocks to full-band
/// output. Without a network the mask is the identity and the block only
/// adds the filterbank latency.
#[derive(Debug, Clone)]
pub struct PostFilterStream {
    config: PipelineConfig,
    bank: PqmfBank,
    inputs: [Analyzer; 3],
    istft: Vec<StreamingIstft>,
    synthesis: StreamingSynthesis,
    net: Option<StreamingPostFilter<f32>>,
}

impl PostFilterStream {
    pub fn new(config: &PipelineConfig, net: Option<Stfgcrn<f32>>) -> Result<Self> {
        config.validate()?;
        if let Some(n) = &net {
            if n.config.freq_bins != config.stft.bins() {
                return Err(Error::Config(format!(
                    "network expects {} bins, stft gives {}",
                    n.config.freq_bins,
                    config.stft.bins()
                )));
            }
        }
        let bank = config.bank()?;
        let an = || Analyzer::new(&bank, config.stft);
        Ok(Self {
            inputs: [an()?, an()?, an()?],
            istft: (0..config.bands).map(|_| StreamingIstft::new(config.stft)).collect::<Result<_>>()?,
            synthesis: StreamingSynthesis::new(bank.clone()),
            net: net.map(StreamingPostFilter::new),
            bank,
            config: config.clone(),
        })
    }

    /// Full-band samples per STFT hop.
    pub fn step(&self) -> usize {
        self.config.bands * self.config.stft.hop
    }

    /// Output delay in full-band samples: PQMF analysis plus synthesis, and
    /// the STFT overlap of `win − hop` sub-band samples.
    pub fn latency(&self) -> usize {
        self.bank.latency() + self.config.bands * (self.config.stft.win - self.config.stft.hop)
    }

    /// Processes blocks whose length is a multiple of [`Self::step`].
    pub fn push(&mut self, d: &[f64], e: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let step = self.step();
        if d.len() % step != 0 || e.len() != d.len() || y.len() != d.len() {
            return Err(Error::Shape(format!(
                "post-filter blocks must share a length that is a multiple of {step}"
            )));
        }
        let hop = self.config.stft.hop;
        let bins = self.config.stft.bins();
        let frames = d.len() / step;
        let [ad, ae, ay] = &mut self.inputs;
        let sd = ad.push(d, hop)?;
        let se = ae.push(e, hop)?;
        let sy = ay.push(y, hop)?;
        let mask = match &mut self.net {
            Some(net) => Some(net.push(&feature_tensor(&sd, &se, &sy, bins)?)?),
            None => None,
        };
        let mut bands = Vec::with_capacity(self.config.bands);
        for (b, istft) in self.istft.iter_mut().enumerate() {
            let mut out = Vec::with_capacity(frames * hop);
            for t in 0..frames {
                let ef = &se[b][t * bins..(t + 1) * bins];
                let frame: Vec<Complex64> = match &mask {
                    Some(m) => {
                        let md = m.data();
                        let base_re = ((b * 2) * frames + t) * bins;
                        let base_im = ((b * 2 + 1) * frames + t) * bins;
                        ef.iter()
                            .enumerate()
                            .map(|(f, &x)| Complex64::new(md[base_re + f] as f64, md[base_im + f] as f64) * x)
                            .collect()
                    }
                    None => ef.to_vec(),
                };
                out.extend(istft.push(&frame)?);
            }
            bands.push(out);
        }
        self.synthesis.process(&bands)
    }
}

/// Linear stage outputs and the final signal of one offline run.
#[derive(Debug, Clone)]
pub struct ProcessOutput {
    pub output: Waveform,
    pub linear: LinearOutput,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    net: Option<Stfgcrn<f32>>,
}

impl Pipeline {
    /// Loads the checkpoint named in the config. A missing checkpoint is not
    /// an error: the pipeline falls back to linear-only with a warning.
    pub fn new(mut config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let net = match (&config.checkpoint, config.linear_only) {
            (_, true) => None,
            (Some(path), false) if path.exists() => Some(Stfgcrn::load(path)?),
            (Some(path), false) => {
                warn!("checkpoint {} not found; running linear-only", path.display());
                config.linear_only = true;
                None
            }
            (None, false) => {
                warn!("no checkpoint configured; running linear-only");
                config.linear_only = true;
                None
            }
        };
        Ok(Self { config, net })
    }

    pub fn with_network(config: PipelineConfig, net: Stfgcrn<f32>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, net: Some(net) })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn network(&self) -> Option<&Stfgcrn<f32>> {
        self.net.as_ref()
    }

    /// Total latency of the streaming cascade in full-band samples (the
    /// NLMS stage adds none).
    pub fn latency(&self) -> Result<usize> {
        if self.config.linear_only {
            return Ok(0);
        }
        Ok(PostFilterStream::new(&self.config, None)?.latency())
    }

    /// Linear stage outputs, or `(d, 0)` when the linear stage is bypassed.
    pub fn linear_stage(&self, mic: &Waveform, far: &Waveform) -> Result<LinearOutput> {
        check_rate(mic)?;
        check_rate(far)?;
        if self.config.neural_only {
            return Ok(LinearOutput {
                error: mic.clone(),
                echo: Waveform::zeros(mic.len(), mic.sample_rate()),
                delay: crate::tde::DelayEstimate::NONE,
                applied_delay: 0,
            });
        }
        run_linear_stage(mic, far, &self.config.linear)
    }

    pub fn process(&self, mic: &Waveform, far: &Waveform) -> Result<ProcessOutput> {
        let linear = self.linear_stage(mic, far)?;
        if self.config.linear_only {
            return Ok(ProcessOutput {
                output: linear.error.clone(),
                linear,
            });
        }
        let output = self.post_filter(mic.samples(), linear.error.samples(), linear.echo.samples())?;
        Ok(ProcessOutput {
            output: Waveform::new(output, mic.sample_rate())?,
            linear,
        })
    }

    /// Offline post-filter, latency-compensated to the input timeline.
    pub fn post_filter(&self, d: &[f64], e: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut stream = PostFilterStream::new(&self.config, self.net.clone())?;
        let n = d.len();
        let lat = stream.latency();
        let step = stream.step();
        let total = (n + lat).div_ceil(step) * step;
        let pad = |x: &[f64]| {
            let mut v = x.to_vec();
            v.resize(total, 0.0);
            v
        };
        let (d, e, y) = (pad(d), pad(e), pad(y));
        let chunk = step * self.config.offline_chunk;
        let mut out = Vec::with_capacity(total);
        for start in (0..total).step_by(chunk) {
            let end = (start + chunk).min(total);
            out.extend(stream.push(&d[start..end], &e[start..end], &y[start..end])?);
        }
        Ok(out[lat..lat + n].to_vec())
    }

    pub fn streaming(&self) -> Result<StreamingPipeline> {
        StreamingPipeline::new(&self.config, self.net.clone())
    }
}

fn check_rate(w: &Waveform) -> Result<()> {
    if w.sample_rate() != FULLBAND_RATE {
        return Err(Error::SampleRate {
            got: w.sample_rate(),
            expected: FULLBAND_RATE,
        });
    }
    Ok(())
}

/// Block-streaming cascade: tracked delay, NLMS, and post-filter, one NLMS
/// block (20 ms) per call; the post-filter runs in 10 ms hops. The output
/// lags the input by [`StreamingPipeline::latency`] samples.
#[derive(Debug, Clone)]
pub struct StreamingPipeline {
    tde: Option<StreamingTde>,
    margin: usize,
    far_history: Vec<f64>,
    max_delay: usize,
    nlms: AdaptiveFilterState,
    post: Option<PostFilterStream>,
    neural_only: bool,
}

impl StreamingPipeline {
    pub fn new(config: &PipelineConfig, net: Option<Stfgcrn<f32>>) -> Result<Self> {
        config.validate()?;
        let tde = match (config.linear.max_lag, config.neural_only) {
            (Some(max_lag), false) => Some(StreamingTde::new(StreamingTdeConfig {
                max_lag,
                ..config.streaming_tde
            })?),
            _ => None,
        };
        let max_delay = config.linear.max_lag.unwrap_or(0);
        let post = if config.linear_only {
            None
        } else {
            Some(PostFilterStream::new(config, net)?)
        };
        Ok(Self {
            tde,
            margin: config.linear.delay_margin,
            far_history: vec![0.0; max_delay],
            max_delay,
            nlms: AdaptiveFilterState::new(config.linear.nlms)?,
            post,
            neural_only: config.neural_only,
        })
    }

    pub fn block(&self) -> usize {
        self.nlms.config().block
    }

    pub fn latency(&self) -> usize {
        self.post.as_ref().map_or(0, PostFilterStream::latency)
    }

    pub fn push(&mut self, mic: &[f64], far: &[f64]) -> Result<Vec<f64>> {
        let b = self.block();
        if mic.len() != b || far.len() != b {
            return Err(Error::Shape(format!("streaming blocks must hold {b} samples")));
        }
        let (e, y) = if self.neural_only {
            (mic.to_vec(), vec![0.0; b])
        } else {
            let delay = match &mut self.tde {
                Some(t) => t.push(mic, far).delay.saturating_sub(self.margin).min(self.max_delay),
                None => 0,
            };
            self.far_history.extend_from_slice(far);
            let end = self.far_history.len() - delay;
            let aligned = self.far_history[end - b..end].to_vec();
            let keep = self.max_delay + b;
            if self.far_history.len() > keep {
                self.far_history.drain(..self.far_history.len() - keep);
            }
            match self.nlms.process_block(&aligned, mic) {
                Ok(r) => r,
                Err(Error::FilterReset) => {
                    warn!("adaptive filter diverged; state reset");
                    (mic.to_vec(), vec![0.0; b])
                }
                Err(err) => return Err(err),
            }
        };
        let Some(post) = &mut self.post else {
            return Ok(e);
        };
        let step = post.step();
        let mut out = Vec::with_capacity(b);
        for s in (0..b).step_by(step) {
            out.extend(post.push(&mic[s..s + step], &e[s..s + step], &y[s..s + step])?);
        }
        Ok(out)
    }
}

/// `10·log10(Σ mic² / Σ out²)` over the label frames marked active (all
/// frames when `active` is `None`), clamped to 100 dB.
pub fn erle(mic: &[f64], out: &[f64], active: Option<&[bool]>) -> f64 {
    const CLAMP: f64 = 100.0;
    let n = mic.len().min(out.len());
    let (mut pm, mut po) = (0.0, 0.0);
    match active {
        None => {
            pm = mic[..n].iter().map(|v| v * v).sum();
            po = out[..n].iter().map(|v| v * v).sum();
        }
        Some(mask) => {
            let mut covered = vec![false; n];
            for (t, _) in mask.iter().enumerate().filter(|(_, &a)| a) {
                let start = t * LABEL_HOP;
                for c in covered.iter_mut().skip(start).take(LABEL_FRAME) {
                    *c = true;
                }
            }
            for i in (0..n).filter(|&i| covered[i]) {
                pm += mic[i] * mic[i];
                po += out[i] * out[i];
            }
        }
    }
    if po == 0.0 {
        return if pm == 0.0 { 0.0 } else { CLAMP };
    }
    (10.0 * (pm / po).log10()).min(CLAMP)
}

/// Real-time factor `processing / audio`.
pub fn rtf(processing_secs: f64, audio_secs: f64) -> Result<f64> {
    if !(audio_secs > 0.0) || !(processing_secs > 0.0) {
        return Err(Error::Config(format!(
            "rtf needs positive durations (processing {processing_secs} s, audio {audio_secs} s)"
        )));
    }
    Ok(processing_secs / audio_secs)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RtfMeasurement {
    pub rtf: f64,
    pub processing_secs: f64,
    pub audio_secs: f64,
}

/// Wall-clock RTF of the streaming cascade over `seconds` of synthetic
/// echo-plus-speech input, in 20 ms blocks.
pub fn measure_rtf(pipeline: &Pipeline, seconds: f64, seed: u64) -> Result<RtfMeasurement> {
    let mut stream = pipeline.streaming()?;
    let b = stream.block();
    let len = ((seconds * FULLBAND_RATE as f64) as usize).div_ceil(b).max(1) * b;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let far = speech_like(len, FULLBAND_RATE, &mut rng);
    let near = speech_like(len, FULLBAND_RATE, &mut rng);
    let noise = noise_like(len, FULLBAND_RATE, &mut rng);
    let path: Vec<f64> = (0..2400).map(|i| 0.3 * (-(i as f64) / 400.0).exp() * if i % 7 == 0 { 1.0 } else { -0.2 }).collect();
    let echo = convolve(&far, &path);
    let mic: Vec<f64> = (0..len).map(|i| echo[i] + 0.3 * near[i] + 0.01 * noise[i]).collect();
    let start = Instant::now();
    for (m, f) in mic.chunks(b).zip(far.chunks(b)) {
        stream.push(m, f)?;
    }
    let processing_secs = start.elapsed().as_secs_f64();
    let audio_secs = len as f64 / FULLBAND_RATE as f64;
    Ok(RtfMeasurement {
        rtf: rtf(processing_secs, audio_secs)?,
        processing_secs,
        audio_secs,
    })
}
