//! Analyse a chirp with the sub-band STFT and resynthesise it.

use subband_aec::signal::{istft, snr_db, stft, StftConfig, Waveform};

fn main() -> subband_aec::Result<()> {
    let fs = 12_000;
    let x: Vec<f64> = (0..fs)
        .map(|n| {
            let t = n as f64 / fs as f64;
            (2.0 * std::f64::consts::PI * (200.0 + 1500.0 * t) * t).sin()
        })
        .collect();
    let cfg = StftConfig::SUBBAND;
    let spec = stft(&Waveform::new(x.clone(), fs as u32)?, &cfg)?;
    println!("{} frames x {} bins (win {}, hop {}, fft {})", spec.frames, spec.freq, cfg.win, cfg.hop, cfg.fft_size);

    let back = istft(&spec)?;
    let (a, b) = (cfg.win, x.len() - cfg.win);
    println!("round trip SNR {:.1} dB", snr_db(&x[a..b], &back.samples()[a..b]));
    Ok(())
}
