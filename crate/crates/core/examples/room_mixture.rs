//! Simulate a room, then render one clip of each talk scenario.

use subband_aec::datagen::{build_manifest, image_method_rir, render_clip, DataRanges, RoomSpec, SourcePool};
use subband_aec::datagen::rir::{decay_time, energy_decay_db};

fn main() -> subband_aec::Result<()> {
    let room = RoomSpec {
        dims: [5.0, 4.0, 3.0],
        source: [1.0, 1.5, 1.2],
        mic: [3.5, 2.5, 1.5],
        rt60: 0.4,
        max_order: 150,
    };
    let h = image_method_rir(&room, 48_000)?;
    let t = decay_time(&energy_decay_db(&h), 48_000.0);
    println!("rir: {} taps, measured decay time {:?} s (target {})", h.len(), t, room.rt60);

    let ranges = DataRanges {
        duration_s: 2.0,
        max_order: 40,
        ..DataRanges::default()
    };
    for record in build_manifest(&SourcePool::default(), 3, &ranges, 7)? {
        let m = render_clip(&record)?;
        let active = |l: &[bool]| l.iter().filter(|&&b| b).count();
        println!(
            "{} {:?}: {} samples, near active {}/{} frames, far active {}/{} frames",
            record.id,
            record.mix.scenario,
            m.mic.len(),
            active(&m.near_labels),
            m.near_labels.len(),
            active(&m.far_labels),
            m.far_labels.len()
        );
    }
    Ok(())
}
