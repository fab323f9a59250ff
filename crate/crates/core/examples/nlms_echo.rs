//! Adapt the partitioned-block NLMS filter to a synthetic echo path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband_aec::linear::{AdaptiveFilterState, NlmsConfig};
use subband_aec::signal::{convolve, mean_power};

fn main() -> subband_aec::Result<()> {
    let cfg = NlmsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h: Vec<f64> = (0..cfg.tail())
        .map(|i| rng.gen_range(-0.3..0.3) * (-(i as f64) / 1500.0).exp())
        .collect();
    let far: Vec<f64> = (0..6 * 48_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mic = convolve(&far, &h)[..far.len()].to_vec();

    let mut filter = AdaptiveFilterState::new(cfg)?;
    let second = 48_000 / cfg.block;
    for (k, (f, m)) in far.chunks(cfg.block).zip(mic.chunks(cfg.block)).enumerate() {
        let (e, _) = filter.process_block(f, m)?;
        if k % second == second - 1 {
            let erle = 10.0 * (mean_power(m) / mean_power(&e).max(1e-20)).log10();
            println!("t = {} s  block ERLE {erle:5.1} dB", (k + 1) / second);
        }
    }
    let w = filter.impulse_response();
    let err: f64 = h.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = h.iter().map(|a| a * a).sum();
    println!("misalignment {:.1} dB", 10.0 * (err / norm).log10());
    Ok(())
}
