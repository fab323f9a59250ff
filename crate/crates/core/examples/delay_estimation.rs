//! Estimate a far-end to microphone delay with GCC-PHAT, batch and streaming.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband_aec::signal::Waveform;
use subband_aec::tde::{compensate, gcc_phat, StreamingTde, StreamingTdeConfig};

fn main() -> subband_aec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let delay = 7_345;
    let len = 4 * 48_000;
    let far: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mic: Vec<f64> = (0..len)
        .map(|n| 0.5 * if n >= delay { far[n - delay] } else { 0.0 } + 0.05 * rng.gen_range(-1.0..1.0))
        .collect();
    let (mic, far) = (Waveform::new(mic, 48_000)?, Waveform::new(far, 48_000)?);

    let est = gcc_phat(&mic, &far, 48_000)?;
    println!("batch: delay {} samples (true {delay}), confidence {:.1}", est.delay, est.confidence);
    let aligned = compensate(&far, &est);
    println!("after compensation: delay {}", gcc_phat(&mic, &aligned, 48_000)?.delay);

    let mut tde = StreamingTde::new(StreamingTdeConfig::default())?;
    for (k, (m, f)) in mic.samples().chunks(960).zip(far.samples().chunks(960)).enumerate() {
        let e = tde.push(m, f);
        if k % 50 == 49 {
            println!("streaming at {:.1} s: delay {}", (k + 1) as f64 * 0.02, e.delay);
        }
    }
    Ok(())
}
