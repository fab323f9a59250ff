//! Train a small post-filter for a few steps on synthetic clips.

use subband_aec::datagen::{build_manifest, DataRanges, SourcePool};
use subband_aec::losses::LossConfig;
use subband_aec::pipeline::PipelineConfig;
use subband_aec::stfgcrn::{NetworkConfig, Stfgcrn};
use subband_aec::train::{collate, Clip, TrainConfig, Trainer};

fn main() -> subband_aec::Result<()> {
    let ranges = DataRanges {
        duration_s: 1.0,
        max_order: 30,
        ..DataRanges::default()
    };
    let examples = build_manifest(&SourcePool::default(), 4, &ranges, 5)?
        .iter()
        .map(|r| Clip::render(r)?.example(&PipelineConfig::default()))
        .collect::<subband_aec::Result<Vec<_>>>()?;
    let (x, targets) = collate(&examples)?;

    let net = NetworkConfig {
        channels: 8,
        fd_layers: 3,
        tfcm_layers: 2,
        vad_channels: 4,
        ..NetworkConfig::default()
    };
    let cfg = TrainConfig {
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Stfgcrn::new(net, 1)?, &cfg, LossConfig::default());
    println!("initial loss {:.4}", trainer.evaluate(&x, &targets)?.total);
    for step in 1..=8 {
        let r = trainer.step(&x, &targets)?;
        println!("step {step}: loss {:.4} (mask {:.4}, echo-aware {:.4})", r.total, r.mask, r.echo_aware);
    }
    Ok(())
}
