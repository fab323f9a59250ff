//! Score an untrained small network and the linear stage on synthetic clips.

use subband_aec::datagen::{build_manifest, DataRanges, SourcePool};
use subband_aec::eval::evaluate;
use subband_aec::pipeline::{Pipeline, PipelineConfig};
use subband_aec::stfgcrn::{NetworkConfig, Stfgcrn};
use subband_aec::train::Clip;

fn main() -> subband_aec::Result<()> {
    let ranges = DataRanges {
        duration_s: 2.0,
        max_order: 30,
        ..DataRanges::default()
    };
    let clips = build_manifest(&SourcePool::default(), 6, &ranges, 3)?
        .iter()
        .map(Clip::render)
        .collect::<subband_aec::Result<Vec<_>>>()?;
    let net = NetworkConfig {
        channels: 8,
        fd_layers: 3,
        tfcm_layers: 2,
        vad_channels: 4,
        ..NetworkConfig::default()
    };
    let p = Pipeline::with_network(PipelineConfig::default(), Stfgcrn::new(net, 0)?)?;
    let report = evaluate(&p, &clips, Some(1.0))?;
    println!("{}", report.table());
    report.write_jsonl(&mut std::io::stdout())?;
    Ok(())
}
