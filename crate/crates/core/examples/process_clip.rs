//! Run the full cascade on a synthetic far-end single-talk clip, offline and
//! block by block.

use subband_aec::datagen::{build_manifest, DataRanges, Scenario, SourcePool};
use subband_aec::pipeline::{erle, Pipeline, PipelineConfig};
use subband_aec::signal::Waveform;
use subband_aec::train::Clip;

fn main() -> subband_aec::Result<()> {
    let ranges = DataRanges {
        duration_s: 3.0,
        max_order: 40,
        ..DataRanges::default()
    };
    let mut record = build_manifest(&SourcePool::default(), 1, &ranges, 9)?.remove(0);
    record.mix.scenario = Scenario::FarSingleTalk;
    let clip = Clip::render(&record)?;
    let mic = Waveform::new(clip.mic.clone(), 48_000)?;
    let far = Waveform::new(clip.far.clone(), 48_000)?;

    // Without a trained checkpoint the post-filter is skipped.
    let p = Pipeline::new(PipelineConfig::default())?;
    let out = p.process(&mic, &far)?;
    println!("estimated delay {} samples", out.linear.delay.delay);
    println!("linear-stage ERLE {:.1} dB", erle(&clip.mic, out.output.samples(), Some(&clip.far_labels)));

    let mut stream = p.streaming()?;
    let mut y = Vec::new();
    for (m, f) in clip.mic.chunks(stream.block()).zip(clip.far.chunks(stream.block())) {
        y.extend(stream.push(m, f)?);
    }
    // Linear-only streaming adds no algorithmic delay; the post-filter adds 543 samples.
    // The linear stage alone adds no algorithmic delay.
    println!("streaming: {} samples out, latency {} samples", y.len(), stream.latency());
    Ok(())
}
