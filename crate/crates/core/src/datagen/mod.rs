//! Synthetic training and evaluation data: room impulse responses, mixing
//! at prescribed echo and noise ratios, activity labels, and manifests.

pub mod manifest;
pub mod mix;
pub mod rir;
pub mod synth;

pub use manifest::{
    build_manifest, read_manifest, render_all, render_clip, scenario_counts, write_manifest, ClipFiles, ClipRecord,
    DataRanges, SourcePool, SourceRef,
};
pub use mix::{measured_ratio_db, mix, ratio_gain, vad_labels, MixSpec, Mixture, RatioWindow, Scenario};
pub use rir::{image_method_rir, RoomSpec};
pub use synth::SynthKind;
