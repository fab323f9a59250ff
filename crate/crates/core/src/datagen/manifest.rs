//! Scenario manifests: drawing clip specifications, rendering them to WAV
//! files, and the line-delimited JSON record format.
//!
//! Each manifest line is one [`ClipRecord`]. Rendered file paths are
//! relative to the manifest's directory.

use super::mix::{mix, MixSpec, Mixture, Scenario};
use super::rir::{image_method_rir, RoomSpec};
use super::synth::{synthesize, SynthKind};
use crate::error::{Error, Result};
use crate::signal::wav::{read_wav_at, write_wav, WavFormat};
use crate::signal::{Waveform, FULLBAND_RATE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// Share of far-end and near-end single-talk clips; the rest are double
/// talk (400/400/700 of 1500).
pub const FAR_SINGLE_SHARE: f64 = 400.0 / 1500.0;
pub const NEAR_SINGLE_SHARE: f64 = 400.0 / 1500.0;

/// Closed intervals the clip parameters are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRanges {
    pub ser_db: (f64, f64),
    pub snr_near_db: (f64, f64),
    pub snr_far_db: (f64, f64),
    /// Extra echo delay in samples.
    pub delay: (usize, usize),
    pub dims_lo: [f64; 3],
    pub dims_hi: [f64; 3],
    pub rt60: (f64, f64),
    pub max_order: usize,
    pub duration_s: f64,
}

impl Default for DataRanges {
    fn default() -> Self {
        Self {
            ser_db: (-10.0, 15.0),
            snr_near_db: (0.0, 20.0),
            snr_far_db: (15.0, 45.0),
            delay: (0, 9_600),
            dims_lo: [3.0, 3.0, 2.5],
            dims_hi: [8.0, 8.0, 4.0],
            rt60: (0.2, 0.8),
            max_order: 150,
            duration_s: 4.0,
        }
    }
}

impl DataRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(ok(self.ser_db) && ok(self.snr_near_db) && ok(self.snr_far_db) && ok(self.rt60)) {
            return Err(Error::Config("ranges must be finite with lo <= hi".into()));
        }
        if self.rt60.0 <= 0.0 || self.delay.0 > self.delay.1 || !(self.duration_s > 0.0) {
            return Err(Error::Config("rt60, delay and duration ranges are invalid".into()));
        }
        for a in 0..3 {
            if !(self.dims_lo[a] >= 1.5 && self.dims_lo[a] <= self.dims_hi[a]) {
                return Err(Error::Config("room dimensions must be at least 1.5 m with lo <= hi".into()));
            }
        }
        Ok(())
    }
}

/// Where a source signal comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SourceRef {
    Synthetic { kind: SynthKind, seed: u64 },
    File { path: PathBuf },
}

/// Optional audio directories; an empty list falls back to the synthetic
/// generator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourcePool {
    pub near: Vec<PathBuf>,
    pub far: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
}

impl SourcePool {
    /// Collects `*.wav` files under each directory (non-recursive, sorted).
    pub fn from_dirs(near: Option<&Path>, far: Option<&Path>, noise: Option<&Path>) -> Result<Self> {
        let list = |d: Option<&Path>| -> Result<Vec<PathBuf>> {
            let Some(d) = d else { return Ok(Vec::new()) };
            let mut v: Vec<PathBuf> = fs::read_dir(d)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            v.sort();
            Ok(v)
        };
        Ok(Self {
            near: list(near)?,
            far: list(far)?,
            noise: list(noise)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipFiles {
    pub mic: PathBuf,
    pub far: PathBuf,
    pub near: PathBuf,
    pub echo: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub mix: MixSpec,
    pub room: RoomSpec,
    pub rir_id: u64,
    pub duration_s: f64,
    pub near: SourceRef,
    pub far: SourceRef,
    pub noise: SourceRef,
    pub far_noise: SourceRef,
    /// Present once the clip has been rendered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<ClipFiles>,
    /// Per-frame near-end and far-end activity as `0`/`1` strings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near_labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far_labels: Option<String>,
}

/// Clip counts `(far single talk, near single talk, double talk)`.
pub fn scenario_counts(n: usize) -> (usize, usize, usize) {
    let fe = (n as f64 * FAR_SINGLE_SHARE).round() as usize;
    let ne = ((n as f64 * NEAR_SINGLE_SHARE).round() as usize).min(n - fe);
    (fe, ne, n - fe - ne)
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn draw_room(rng: &mut ChaCha8Rng, r: &DataRanges) -> RoomSpec {
    let dims: [f64; 3] = std::array::from_fn(|a| draw(rng, (r.dims_lo[a], r.dims_hi[a])));
    let margin = 0.5;
    let point = |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|a| rng.gen_range(margin..dims[a] - margin)) };
    let source = point(rng);
    let mut mic = point(rng);
    while (0..3).map(|a| (mic[a] - source[a]).powi(2)).sum::<f64>().sqrt() < 0.3 {
        mic = point(rng);
    }
    RoomSpec {
        dims,
        source,
        mic,
        rt60: draw(rng, r.rt60),
        max_order: r.max_order,
    }
}

fn pick(rng: &mut ChaCha8Rng, files: &[PathBuf], kind: SynthKind) -> SourceRef {
    match files.choose(rng) {
        Some(p) => SourceRef::File { path: p.clone() },
        None => SourceRef::Synthetic { kind, seed: rng.gen() },
    }
}

/// Draws `n_clips` clip specifications. Deterministic in `seed`; scenario
/// counts follow [`scenario_counts`] and their order is shuffled.
pub fn build_manifest(pool: &SourcePool, n_clips: usize, ranges: &DataRanges, seed: u64) -> Result<Vec<ClipRecord>> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fe, ne, dt) = scenario_counts(n_clips);
    let mut scenarios: Vec<Scenario> = [(Scenario::FarSingleTalk, fe), (Scenario::NearSingleTalk, ne), (Scenario::DoubleTalk, dt)]
        .iter()
        .flat_map(|&(s, k)| std::iter::repeat(s).take(k))
        .collect();
    scenarios.shuffle(&mut rng);
    let records = scenarios
        .into_iter()
        .enumerate()
        .map(|(i, scenario)| {
            let mix = MixSpec {
                ser_db: draw(&mut rng, ranges.ser_db),
                snr_near_db: draw(&mut rng, ranges.snr_near_db),
                snr_far_db: draw(&mut rng, ranges.snr_far_db),
                delay: rng.gen_range(ranges.delay.0..=ranges.delay.1),
                scenario,
                seed: rng.gen(),
            };
            ClipRecord {
                id: format!("clip-{i:05}"),
                mix,
                room: draw_room(&mut rng, ranges),
                rir_id: i as u64,
                duration_s: ranges.duration_s,
                near: pick(&mut rng, &pool.near, SynthKind::Speech),
                far: pick(&mut rng, &pool.far, SynthKind::Speech),
                noise: pick(&mut rng, &pool.noise, SynthKind::Noise),
                far_noise: pick(&mut rng, &pool.noise, SynthKind::Noise),
                files: None,
                near_labels: None,
                far_labels: None,
            }
        })
        .collect();
    Ok(records)
}

/// Loads (or synthesizes) a source, looped or truncated to `len` samples.
pub fn load_source(src: &SourceRef, len: usize) -> Result<Vec<f64>> {
    match src {
        SourceRef::Synthetic { kind, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok(synthesize(*kind, len, FULLBAND_RATE, &mut rng))
        }
        SourceRef::File { path } => {
            let w = read_wav_at(path, FULLBAND_RATE)?;
            if w.is_empty() {
                return Err(Error::Config(format!("{} is empty", path.display())));
            }
            Ok(w.samples().iter().copied().cycle().take(len).collect())
        }
    }
}

/// Synthesizes the signals of one record.
pub fn render_clip(record: &ClipRecord) -> Result<Mixture> {
    let len = (record.duration_s * FULLBAND_RATE as f64).round() as usize;
    let s = load_source(&record.near, len)?;
    let x = load_source(&record.far, len)?;
    let v = load_source(&record.noise, len)?;
    let u = load_source(&record.far_noise, len)?;
    let h = image_method_rir(&record.room, FULLBAND_RATE)?;
    mix(&s, &x, &v, &u, &h, &record.mix)
}

pub fn labels_to_string(labels: &[bool]) -> String {
    labels.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn labels_from_string(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Config(format!("activity label {c:?} is not 0 or 1"))),
        })
        .collect()
}

/// Renders every record into `out_dir/<id>/{mic,far,near,echo}.wav` and
/// returns the records with file paths and labels filled in.
pub fn render_all(records: &[ClipRecord], out_dir: &Path) -> Result<Vec<ClipRecord>> {
    fs::create_dir_all(out_dir)?;
    records
        .iter()
        .map(|r| {
            let m = render_clip(r)?;
            let dir = PathBuf::from(&r.id);
            fs::create_dir_all(out_dir.join(&dir))?;
            let files = ClipFiles {
                mic: dir.join("mic.wav"),
                far: dir.join("far.wav"),
                near: dir.join("near.wav"),
                echo: dir.join("echo.wav"),
            };
            for (path, sig) in [(&files.mic, &m.mic), (&files.far, &m.far), (&files.near, &m.near), (&files.echo, &m.echo)] {
                let w = Waveform::new(sig.clone(), FULLBAND_RATE)?;
                write_wav(out_dir.join(path), &w, WavFormat::Float32)?;
            }
            let mut out = r.clone();
            out.files = Some(files);
            out.near_labels = Some(labels_to_string(&m.near_labels));
            out.far_labels = Some(labels_to_string(&m.far_labels));
            Ok(out)
        })
        .collect()
}

pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}
