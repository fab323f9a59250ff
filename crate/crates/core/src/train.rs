//! Desk-scale training: feature preparation from rendered clips, batching,
//! Adam with a plateau learning-rate schedule, per-epoch checkpoints and a
//! line-delimited loss log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Adam, Tape, Tensor};
use crate::datagen::manifest::{labels_from_string, read_manifest, render_clip, ClipRecord};
use crate::datagen::Scenario;
use crate::error::{Error, Result};
use crate::linear::run_linear_stage;
use crate::losses::{multitask, LossConfig, LossReport, TrainingTargets};
use crate::pipeline::{feature_tensor, subband_spectra, BandSpectra, PipelineConfig};
use crate::signal::wav::read_wav;
use crate::signal::{Waveform, FULLBAND_RATE};
use crate::stfgcrn::{Heads, NetState, Stfgcrn};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Clips per mini-batch.
    pub batch: usize,
    /// Training segment length in seconds.
    pub segment_s: f64,
    pub seed: u64,
    /// Validation epochs without improvement before the rate is cut.
    pub patience: usize,
    pub lr_factor: f64,
    /// Steps per epoch; one pass over the clips when unset.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 60,
            batch: 2,
            segment_s: 10.0,
            seed: 0,
            patience: 2,
            lr_factor: 0.5,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.batch == 0 || !(self.segment_s > 0.0) {
            return Err(Error::Config("train: lr must be >= 0, batch and segment positive".into()));
        }
        if self.patience == 0 || !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::Config("train: patience must be positive and lr_factor in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Multiplies the rate by `factor` once `patience` consecutive validation
/// losses fail to improve on the best so far.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    stagnant: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: None,
            stagnant: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one validation loss; returns true if the rate was cut.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        match self.best {
            Some(b) if val_loss >= b => self.stagnant += 1,
            _ => {
                self.best = Some(val_loss);
                self.stagnant = 0;
            }
        }
        if self.stagnant >= self.patience {
            self.lr *= self.factor;
            self.stagnant = 0;
            return true;
        }
        false
    }
}

/// One clip prepared for the network: features `[bands, 6, T, F]`, target
/// spectra `[bands, T, F]` and per-frame activity labels.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub scenario: Option<Scenario>,
    pub input: Tensor<f32>,
    pub s: (Tensor<f32>, Tensor<f32>),
    pub z: (Tensor<f32>, Tensor<f32>),
    pub near: Vec<f32>,
    pub far: Vec<f32>,
}

fn spectra_tensors(x: &BandSpectra, bins: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let bands = x.len();
    let frames = x.first().map_or(0, |b| b.len() / bins);
    let re = x.iter().flat_map(|b| b.iter().map(|c| c.re as f32)).collect();
    let im = x.iter().flat_map(|b| b.iter().map(|c| c.im as f32)).collect();
    Ok((
        Tensor::new(&[bands, frames, bins], re)?,
        Tensor::new(&[bands, frames, bins], im)?,
    ))
}

/// Network frame `k` spans the 20 ms ending 10 ms after label frame `k − 1`
/// starts, so it takes that label; frame 0 takes label 0.
fn frame_labels(labels: &[bool], frames: usize) -> Vec<f32> {
    (0..frames)
        .map(|k| {
            let i = k.saturating_sub(1);
            if labels.get(i).copied().unwrap_or(false) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

impl Example {
    /// Runs the linear stage and builds features and targets from the clip
    /// components.
    #[allow(clippy::too_many_arguments)]
    pub fn prepare(
        id: impl Into<String>,
        scenario: Option<Scenario>,
        mic: &[f64],
        far: &[f64],
        near: &[f64],
        echo: &[f64],
        near_labels: &[bool],
        far_labels: &[bool],
        config: &PipelineConfig,
    ) -> Result<Self> {
        let bins = config.stft.bins();
        let (e, y) = if config.neural_only {
            (mic.to_vec(), vec![0.0; mic.len()])
        } else {
            let lin = run_linear_stage(
                &Waveform::new(mic.to_vec(), FULLBAND_RATE)?,
                &Waveform::new(far.to_vec(), FULLBAND_RATE)?,
                &config.linear,
            )?;
            (lin.error.into_samples(), lin.echo.into_samples())
        };
        let sd = subband_spectra(mic, config)?;
        let se = subband_spectra(&e, config)?;
        let sy = subband_spectra(&y, config)?;
        let input = feature_tensor(&sd, &se, &sy, bins)?;
        let frames = input.shape()[2];
        Ok(Self {
            id: id.into(),
            scenario,
            input,
            s: spectra_tensors(&subband_spectra(near, config)?, bins)?,
            z: spectra_tensors(&subband_spectra(echo, config)?, bins)?,
            near: frame_labels(near_labels, frames),
            far: frame_labels(far_labels, frames),
        })
    }

    pub fn frames(&self) -> usize {
        self.input.shape()[2]
    }

    /// Frames `[start, start + len)`.
    pub fn crop(&self, start: usize, len: usize) -> Result<Self> {
        let cut = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
            let sh = t.shape();
            let (frames, bins) = (sh[sh.len() - 2], sh[sh.len() - 1]);
            let outer: usize = sh[..sh.len() - 2].iter().product();
            let mut data = Vec::with_capacity(outer * len * bins);
            for o in 0..outer {
                let base = (o * frames + start) * bins;
                data.extend_from_slice(&t.data()[base..base + len * bins]);
            }
            let mut shape = sh.to_vec();
            let n = shape.len();
            shape[n - 2] = len;
            Tensor::new(&shape, data)
        };
        if start + len > self.frames() {
            return Err(Error::Shape(format!("crop {start}+{len} beyond {} frames", self.frames())));
        }
        Ok(Self {
            id: self.id.clone(),
            scenario: self.scenario,
            input: cut(&self.input)?,
            s: (cut(&self.s.0)?, cut(&self.s.1)?),
            z: (cut(&self.z.0)?, cut(&self.z.1)?),
            near: self.near[start..start + len].to_vec(),
            far: self.far[start..start + len].to_vec(),
        })
    }
}

/// Stacks equally long examples along the batch axis. Labels are expanded
/// to one row per band so each batch item keeps its own clip's labels.
pub fn collate(items: &[Example]) -> Result<(Tensor<f32>, TrainingTargets<f32>)> {
    let Some(first) = items.first() else {
        return Err(Error::Config("empty batch".into()));
    };
    let frames = first.frames();
    if items.iter().any(|e| e.frames() != frames) {
        return Err(Error::Shape("batch items differ in length".into()));
    }
    let cat = |f: &dyn Fn(&Example) -> &Tensor<f32>| -> Result<Tensor<f32>> {
        let mut shape = f(first).shape().to_vec();
        shape[0] = items.iter().map(|e| f(e).shape()[0]).sum();
        let data = items.iter().flat_map(|e| f(e).data().iter().copied()).collect();
        Tensor::new(&shape, data)
    };
    let rows = |f: &dyn Fn(&Example) -> &Vec<f32>| -> Vec<f32> {
        items
            .iter()
            .flat_map(|e| {
                let bands = e.input.shape()[0];
                std::iter::repeat(f(e).iter().copied()).take(bands).flatten()
            })
            .collect()
    };
    let targets = TrainingTargets {
        s_re: cat(&|e| &e.s.0)?,
        s_im: cat(&|e| &e.s.1)?,
        z_re: cat(&|e| &e.z.0)?,
        z_im: cat(&|e| &e.z.1)?,
        near: rows(&|e| &e.near),
        far: rows(&|e| &e.far),
    };
    Ok((cat(&|e| &e.input)?, targets))
}

/// Signals and labels of one rendered clip, 48 kHz.
#[derive(Debug, Clone)]
pub struct Clip {
    pub id: String,
    pub scenario: Option<Scenario>,
    pub mic: Vec<f64>,
    pub far: Vec<f64>,
    pub near: Vec<f64>,
    pub echo: Vec<f64>,
    pub near_labels: Vec<bool>,
    pub far_labels: Vec<bool>,
}

impl Clip {
    /// Renders a manifest record in memory.
    pub fn render(record: &ClipRecord) -> Result<Self> {
        let m = render_clip(record)?;
        Ok(Self {
            id: record.id.clone(),
            scenario: Some(record.mix.scenario),
            mic: m.mic,
            far: m.far,
            near: m.near,
            echo: m.echo,
            near_labels: m.near_labels,
            far_labels: m.far_labels,
        })
    }

    pub fn example(&self, config: &PipelineConfig) -> Result<Example> {
        Example::prepare(
            self.id.clone(),
            self.scenario,
            &self.mic,
            &self.far,
            &self.near,
            &self.echo,
            &self.near_labels,
            &self.far_labels,
            config,
        )
    }
}

/// Loads every rendered clip of a manifest. File paths in the manifest are
/// relative to its directory.
pub fn load_clips(manifest: &Path) -> Result<Vec<Clip>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .iter()
        .map(|r| {
            let files = r
                .files
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{}: clip {} was never rendered", manifest.display(), r.id)))?;
            let load = |p: &PathBuf| -> Result<Vec<f64>> {
                let w = read_wav(base.join(p))?;
                if w.sample_rate() != FULLBAND_RATE {
                    return Err(Error::SampleRate {
                        got: w.sample_rate(),
                        expected: FULLBAND_RATE,
                    });
                }
                Ok(w.into_samples())
            };
            let labels = |s: &Option<String>| labels_from_string(s.as_deref().unwrap_or(""));
            Ok(Clip {
                id: r.id.clone(),
                scenario: Some(r.mix.scenario),
                mic: load(&files.mic)?,
                far: load(&files.far)?,
                near: load(&files.near)?,
                echo: load(&files.echo)?,
                near_labels: labels(&r.near_labels)?,
                far_labels: labels(&r.far_labels)?,
            })
        })
        .collect()
}

pub fn load_examples(manifest: &Path, config: &PipelineConfig) -> Result<Vec<Example>> {
    load_clips(manifest)?.iter().map(|c| c.example(config)).collect()
}

/// Network, optimizer and schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: Stfgcrn<f32>,
    pub adam: Adam,
    pub scheduler: PlateauScheduler,
    pub loss: LossConfig,
}

impl Trainer {
    pub fn new(net: Stfgcrn<f32>, config: &TrainConfig, loss: LossConfig) -> Self {
        Self {
            net,
            adam: Adam::new(config.lr),
            scheduler: PlateauScheduler::new(config.lr, config.lr_factor, config.patience),
            loss,
        }
    }

    /// Loss of a batch without updating anything.
    pub fn evaluate(&self, input: &Tensor<f32>, targets: &TrainingTargets<f32>) -> Result<LossReport> {
        let mut tape = Tape::new();
        let bound = self.net.params.bind_frozen(&mut tape);
        let x = tape.constant(input.clone());
        let out = self.net.forward(&mut tape, &bound, x, &mut NetState::new(), Heads::ALL)?;
        Ok(multitask(&mut tape, &out, targets, &self.loss)?.report(&tape))
    }

    /// One forward/backward pass and Adam update. A non-finite loss aborts
    /// before any parameter changes.
    pub fn step(&mut self, input: &Tensor<f32>, targets: &TrainingTargets<f32>) -> Result<LossReport> {
        let mut tape = Tape::new();
        let bound = self.net.params.bind(&mut tape);
        let x = tape.constant(input.clone());
        let out = self.net.forward(&mut tape, &bound, x, &mut NetState::new(), Heads::ALL)?;
        let terms = multitask(&mut tape, &out, targets, &self.loss)?;
        let report = terms.report(&tape);
        if !report.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss {report:?}")));
        }
        let mut grads = tape.backward(terms.total)?;
        let g = bound.collect(&tape, &mut grads);
        self.adam.lr = self.scheduler.lr();
        self.adam.step(&mut self.net.params, &g)?;
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr_cut: bool,
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum LogLine<'a> {
    Step {
        epoch: usize,
        step: usize,
        lr: f64,
        clips: Vec<&'a str>,
        #[serde(flatten)]
        loss: LossReport,
    },
    Epoch(&'a EpochRecord),
}

/// Frames in a training segment at the sub-band frame rate.
pub fn segment_frames(config: &TrainConfig, pipeline: &PipelineConfig) -> usize {
    let rate = FULLBAND_RATE as f64 / (pipeline.bands * pipeline.stft.hop) as f64;
    ((config.segment_s * rate).round() as usize).max(1)
}

/// Mean total loss over `examples`, each cropped to at most `max_frames`.
pub fn mean_loss(trainer: &Trainer, examples: &[Example], max_frames: usize) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for e in examples {
        let e = e.crop(0, e.frames().min(max_frames))?;
        let (x, t) = collate(std::slice::from_ref(&e))?;
        sum += trainer.evaluate(&x, &t)?.total;
    }
    Ok(sum / examples.len() as f64)
}

/// Trains for `config.epochs` epochs. With `out_dir` set, writes
/// `train_log.jsonl`, `epoch-NNN.ckpt` and `last.ckpt`; a non-finite loss
/// writes `nan_dump.json` and aborts.
pub fn train(
    trainer: &mut Trainer,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
    pipeline: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut log = match out_dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            Some(std::io::BufWriter::new(fs::File::create(d.join("train_log.jsonl"))?))
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seg = segment_frames(config, pipeline);
    let per_epoch = config.steps_per_epoch.unwrap_or_else(|| train_set.len().div_ceil(config.batch));
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    let mut order: Vec<usize> = Vec::new();
    for epoch in 1..=config.epochs {
        let mut train_sum = 0.0;
        for _ in 0..per_epoch {
            if order.len() < config.batch {
                let mut fresh: Vec<usize> = (0..train_set.len()).collect();
                fresh.shuffle(&mut rng);
                order.extend(fresh);
            }
            let picks: Vec<&Example> = order.drain(..config.batch.min(order.len())).map(|i| &train_set[i]).collect();
            let len = picks.iter().map(|e| e.frames()).min().unwrap_or(0).min(seg);
            let batch = picks
                .iter()
                .map(|e| e.crop(rng.gen_range(0..=e.frames() - len), len))
                .collect::<Result<Vec<_>>>()?;
            let (x, t) = collate(&batch)?;
            step += 1;
            let report = match trainer.step(&x, &t) {
                Ok(r) => r,
                Err(Error::NonFinite(msg)) => {
                    if let Some(d) = out_dir {
                        let dump = serde_json::json!({
                            "epoch": epoch,
                            "step": step,
                            "lr": trainer.scheduler.lr(),
                            "clips": batch.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(),
                            "error": msg,
                        });
                        fs::write(d.join("nan_dump.json"), serde_json::to_string_pretty(&dump)?)?;
                    }
                    return Err(Error::NonFinite(format!("epoch {epoch}, step {step}: {msg}")));
                }
                Err(e) => return Err(e),
            };
            train_sum += report.total;
            if let Some(w) = &mut log {
                let line = LogLine::Step {
                    epoch,
                    step,
                    lr: trainer.scheduler.lr(),
                    clips: batch.iter().map(|e| e.id.as_str()).collect(),
                    loss: report,
                };
                serde_json::to_writer(&mut *w, &line)?;
                w.write_all(b"\n")?;
            }
        }
        let train_loss = train_sum / per_epoch as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            mean_loss(trainer, val_set, seg)?
        };
        let lr = trainer.scheduler.lr();
        let lr_cut = trainer.scheduler.observe(val_loss);
        let rec = EpochRecord {
            epoch,
            steps: step,
            lr,
            train_loss,
            val_loss,
            lr_cut,
        };
        info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {lr:.2e}");
        if let (Some(w), Some(d)) = (&mut log, out_dir) {
            serde_json::to_writer(&mut *w, &LogLine::Epoch(&rec))?;
            w.write_all(b"\n")?;
            w.flush()?;
            trainer.net.save(&d.join(format!("epoch-{epoch:03}.ckpt")))?;
            trainer.net.save(&d.join("last.ckpt"))?;
        }
        history.push(rec);
    }
    Ok(history)
}
