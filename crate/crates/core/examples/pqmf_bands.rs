//! Split tones into four PQMF bands and show where their energy lands.

use subband_aec::pqmf::PqmfBank;
use subband_aec::signal::{mean_power, snr_db, Waveform};

fn main() -> subband_aec::Result<()> {
    let bank = PqmfBank::default_bank();
    println!(
        "{} bands, {} taps, latency {} samples, ripple {:.3} dB",
        bank.num_bands(),
        bank.prototype().len(),
        bank.latency(),
        bank.composite_ripple_db()
    );

    for f in [1_000.0, 9_000.0, 15_000.0, 21_000.0] {
        let x: Vec<f64> = (0..48_000).map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / 48_000.0).sin()).collect();
        let bands = bank.analyze(&Waveform::new(x.clone(), 48_000)?)?;
        let p: Vec<f64> = bands.bands.iter().map(|b| mean_power(b.samples())).collect();
        let total: f64 = p.iter().sum();
        let share: Vec<String> = p.iter().map(|v| format!("{:5.1}%", 100.0 * v / total)).collect();
        let y = bank.synthesize(&bands)?;
        let d = bank.latency();
        let snr = snr_db(&x[..x.len() - d], &y.samples()[d..x.len()]);
        println!("{f:>6} Hz  bands [{}]  reconstruction {snr:.1} dB", share.join(" "));
    }
    Ok(())
}
