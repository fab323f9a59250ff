//! Plain-text `key = value` configuration with dotted keys.
//!
//! ```text
//! # comment
//! nlms.step = 0.5
//! net.channels = 80
//! datagen.ser_db = -10, 15
//! ```
//!
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::DataRanges;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::pipeline::PipelineConfig;
use crate::stfgcrn::NetworkConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key-value file. Tracks which keys were read.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, Entry>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", i + 1)));
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config(format!("line {}: bad key {key:?}", i + 1)));
            }
            let prev = entries.insert(
                key.to_string(),
                Entry {
                    value: v.trim().to_string(),
                    line: i + 1,
                },
            );
            if prev.is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
            }
        }
        Ok(Self {
            entries,
            used: RefCell::default(),
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(key.to_string());
        e.value
            .parse()
            .map(Some)
            .map_err(|err| Error::Config(format!("line {}: {key} = {:?}: {err}", e.line, e.value)))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(key.to_string());
        e.value
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|err| Error::Config(format!("line {}: {key}: {err}", e.line)))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn set<T: FromStr>(&self, key: &str, field: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get(key)? {
            *field = v;
        }
        Ok(())
    }

    fn set_pair<T: FromStr + Copy>(&self, key: &str, field: &mut (T, T)) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get_list::<T>(key)? {
            let [a, b] = v[..] else {
                return Err(Error::Config(format!("{key} needs two values")));
            };
            *field = (a, b);
        }
        Ok(())
    }

    fn set_triple(&self, key: &str, field: &mut [f64; 3]) -> Result<()> {
        if let Some(v) = self.get_list::<f64>(key)? {
            *field = v
                .try_into()
                .map_err(|_| Error::Config(format!("{key} needs three values")))?;
        }
        Ok(())
    }

    /// Keys present in the file that no one read.
    pub fn unused(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.entries.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }
}

/// Inputs for `datagen`: clip count, parameter ranges and optional source
/// directories (synthetic sources otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub clips: usize,
    pub ranges: DataRanges,
    pub near_dir: Option<PathBuf>,
    pub far_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            clips: 15,
            ranges: DataRanges::default(),
            near_dir: None,
            far_dir: None,
            noise_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub network: NetworkConfig,
    /// Seed of a freshly initialized network.
    pub network_seed: u64,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataSpec,
    /// Seconds of audio streamed for the RTF measurement in `eval`.
    pub rtf_seconds: f64,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            network: NetworkConfig::default(),
            network_seed: 0,
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            data: DataSpec::default(),
            rtf_seconds: 2.0,
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let mut c = Self::default();

        let p = &mut c.pipeline;
        let mut tde_enabled = true;
        kv.set("tde.enabled", &mut tde_enabled)?;
        let mut max_lag = p.linear.max_lag.unwrap_or(crate::tde::DEFAULT_MAX_LAG);
        kv.set("tde.max_lag", &mut max_lag)?;
        p.linear.max_lag = tde_enabled.then_some(max_lag);
        kv.set("tde.margin", &mut p.linear.delay_margin)?;
        kv.set("tde.stream_buffer", &mut p.streaming_tde.buffer)?;
        kv.set("tde.stream_interval", &mut p.streaming_tde.interval)?;
        kv.set("tde.min_confidence", &mut p.streaming_tde.min_confidence)?;
        kv.set("tde.hysteresis", &mut p.streaming_tde.hysteresis)?;
        let n = &mut p.linear.nlms;
        kv.set("nlms.block", &mut n.block)?;
        kv.set("nlms.partitions", &mut n.partitions)?;
        kv.set("nlms.step", &mut n.step)?;
        kv.set("nlms.power_smoothing", &mut n.power_smoothing)?;
        kv.set("nlms.regularization", &mut n.regularization)?;
        kv.set("nlms.double_talk_ratio", &mut n.double_talk_ratio)?;
        kv.set("nlms.guard_warmup", &mut n.guard_warmup)?;
        kv.set("pqmf.bands", &mut p.bands)?;
        kv.set("pqmf.taps", &mut p.pqmf_taps)?;
        kv.set("pqmf.transition", &mut p.pqmf_transition)?;
        kv.set("stft.win", &mut p.stft.win)?;
        kv.set("stft.hop", &mut p.stft.hop)?;
        kv.set("stft.fft_size", &mut p.stft.fft_size)?;
        if let Some(path) = kv.get::<PathBuf>("pipeline.checkpoint")? {
            p.checkpoint = Some(path);
        }
        kv.set("pipeline.linear_only", &mut p.linear_only)?;
        kv.set("pipeline.neural_only", &mut p.neural_only)?;
        kv.set("pipeline.offline_chunk", &mut p.offline_chunk)?;

        let net = &mut c.network;
        kv.set("net.channels", &mut net.channels)?;
        kv.set("net.fd_layers", &mut net.fd_layers)?;
        kv.set("net.kernel_t", &mut net.kernel.0)?;
        kv.set("net.kernel_f", &mut net.kernel.1)?;
        kv.set("net.freq_stride", &mut net.freq_stride)?;
        kv.set("net.tfcm_layers", &mut net.tfcm_layers)?;
        kv.set("net.vad_channels", &mut net.vad_channels)?;
        kv.set("net.use_tfcm", &mut net.use_tfcm)?;
        kv.set("net.use_vad", &mut net.use_vad)?;
        kv.set("net.use_echo_decoder", &mut net.use_echo_decoder)?;
        if let Some(b) = kv.get::<f64>("net.mask_bound")? {
            net.mask_bound = (b > 0.0).then_some(b);
        }
        net.freq_bins = c.pipeline.stft.bins();
        kv.set("net.seed", &mut c.network_seed)?;

        let l = &mut c.loss;
        kv.set("loss.compress", &mut l.compress)?;
        kv.set("loss.beta", &mut l.beta)?;
        kv.set("loss.lambda", &mut l.lambda)?;
        kv.set("loss.eps", &mut l.eps)?;

        let t = &mut c.train;
        kv.set("train.lr", &mut t.lr)?;
        kv.set("train.epochs", &mut t.epochs)?;
        kv.set("train.batch", &mut t.batch)?;
        kv.set("train.segment_s", &mut t.segment_s)?;
        kv.set("train.seed", &mut t.seed)?;
        kv.set("train.patience", &mut t.patience)?;
        kv.set("train.lr_factor", &mut t.lr_factor)?;
        if let Some(s) = kv.get::<usize>("train.steps_per_epoch")? {
            t.steps_per_epoch = Some(s);
        }

        let d = &mut c.data;
        kv.set("datagen.clips", &mut d.clips)?;
        let r = &mut d.ranges;
        kv.set_pair("datagen.ser_db", &mut r.ser_db)?;
        kv.set_pair("datagen.snr_near_db", &mut r.snr_near_db)?;
        kv.set_pair("datagen.snr_far_db", &mut r.snr_far_db)?;
        kv.set_pair("datagen.delay", &mut r.delay)?;
        kv.set_triple("datagen.dims_lo", &mut r.dims_lo)?;
        kv.set_triple("datagen.dims_hi", &mut r.dims_hi)?;
        kv.set_pair("datagen.rt60", &mut r.rt60)?;
        kv.set("datagen.max_order", &mut r.max_order)?;
        kv.set("datagen.duration_s", &mut r.duration_s)?;
        d.near_dir = kv.get("datagen.near_dir")?;
        d.far_dir = kv.get("datagen.far_dir")?;
        d.noise_dir = kv.get("datagen.noise_dir")?;

        kv.set("eval.rtf_seconds", &mut c.rtf_seconds)?;

        let unused = kv.unused();
        if !unused.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unused.join(", "))));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.data.ranges.validate()?;
        if !(self.rtf_seconds > 0.0) {
            return Err(Error::Config("eval.rtf_seconds must be positive".into()));
        }
        Ok(())
    }
}
