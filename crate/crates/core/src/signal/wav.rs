//! WAV file I/O (mono, 16-bit PCM or 32-bit IEEE float).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Config(format!(
            "{}: expected mono audio, found {} channels",
            path.as_ref().display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Config(format!(
                "{}: unsupported wav encoding {fmt:?}/{bits} bit",
                path.as_ref().display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Read a wav file and reject any rate other than `expected`.
pub fn read_wav_at(path: impl AsRef<Path>, expected: u32) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate() != expected {
        return Err(Error::SampleRate {
            got: w.sample_rate(),
            expected,
        });
    }
    Ok(w)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: WavFormat) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    for &v in w.samples() {
        match format {
            WavFormat::Pcm16 => {
                let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q)?;
            }
            WavFormat::Float32 => writer.write_sample(v as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_and_rate_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.0, 0.25, -0.5, 0.125], 48_000).unwrap();
        write_wav(&path, &w, WavFormat::Float32).unwrap();
        assert_eq!(read_wav(&path).unwrap(), w);
        assert!(read_wav_at(&path, 48_000).is_ok());
        assert!(matches!(
            read_wav_at(&path, 16_000),
            Err(Error::SampleRate { got: 48_000, .. })
        ));
    }

    #[test]
    fn pcm16_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let w = Waveform::new(vec![0.5, -1.0, 0.3], 16_000).unwrap();
        write_wav(&path, &w, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in w.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
