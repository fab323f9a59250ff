mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use subband_aec::datagen::manifest::{labels_from_string, labels_to_string, load_source};
use subband_aec::datagen::mix::{LABEL_FRAME, LABEL_HOP};
use subband_aec::datagen::synth::{noise_like, speech_like};
use subband_aec::datagen::*;

const FS: u32 = 48_000;

fn room(dims: [f64; 3], source: [f64; 3], mic: [f64; 3], rt60: f64, max_order: usize) -> RoomSpec {
    RoomSpec {
        dims,
        source,
        mic,
        rt60,
        max_order,
    }
}

/// Reverberation time from a least-squares line through the Schroeder decay
/// between −5 and −25 dB, extrapolated to 60 dB.
fn schroeder_rt60(h: &[f64], fs: f64) -> f64 {
    let total: f64 = h.iter().map(|v| v * v).sum();
    let mut tail = total;
    let mut pts = Vec::new();
    for (i, v) in h.iter().enumerate() {
        let db = 10.0 * (tail / total).log10();
        if (-25.0..=-5.0).contains(&db) {
            pts.push((i as f64 / fs, db));
        }
        tail -= v * v;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -60.0 / (sxy / sxx)
}

fn sig(seed: u64, kind: SynthKind, len: usize) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SynthKind::Speech => speech_like(len, FS, &mut r),
        SynthKind::Noise => noise_like(len, FS, &mut r),
    }
}

fn spec(scenario: Scenario, ser: f64, snr: f64) -> MixSpec {
    MixSpec {
        ser_db: ser,
        snr_near_db: snr,
        snr_far_db: 30.0,
        delay: 240,
        scenario,
        seed: 0,
    }
}

struct Sources {
    s: Vec<f64>,
    x: Vec<f64>,
    v: Vec<f64>,
    u: Vec<f64>,
    h: Vec<f64>,
}

fn sources(len: usize) -> Sources {
    let r = room([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [4.0, 3.0, 2.0], 0.3, 12);
    Sources {
        s: sig(1, SynthKind::Speech, len),
        x: sig(2, SynthKind::Speech, len),
        v: sig(3, SynthKind::Noise, len),
        u: sig(4, SynthKind::Noise, len),
        h: image_method_rir(&r, FS).unwrap(),
    }
}

#[test]
fn direct_path_alone_is_one_tap_at_integer_delay() {
    let d = 343.0 * 500.0 / 48_000.0;
    let r = room([6.0, 4.0, 3.0], [1.0, 1.0, 1.0], [1.0 + d, 1.0, 1.0], 0.3, 0);
    let h = image_method_rir(&r, FS).unwrap();
    assert_eq!(h.len(), 14_400);
    let want = 1.0 / (4.0 * PI * d);
    assert!((h[500] - want).abs() < 1e-9 * want, "{} vs {want}", h[500]);
    let stray = h.iter().enumerate().filter(|&(i, _)| i != 500).map(|(_, v)| v.abs()).fold(0.0, f64::max);
    assert!(stray < 1e-9 * want, "energy off the direct tap: {stray}");
}

#[test]
fn direct_path_peak_matches_geometry() {
    let r = room([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [4.0, 3.0, 2.0], 0.3, 0);
    let h = image_method_rir(&r, FS).unwrap();
    let t = 14f64.sqrt() / 343.0 * 48_000.0;
    assert!((t - 523.6).abs() < 0.1);
    let peak = (0..h.len()).max_by(|&a, &b| h[a].abs().total_cmp(&h[b].abs())).unwrap();
    assert!((523..=524).contains(&peak), "peak at {peak}");
}

#[test]
fn reverberant_response_decays_at_requested_rate() {
    for (dims, source, mic, rt60) in [
        ([5.0, 4.0, 3.0], [1.3, 1.1, 1.2], [3.6, 2.9, 1.7], 0.5),
        ([7.0, 6.0, 3.0], [2.0, 1.5, 1.5], [5.0, 4.0, 1.2], 0.4),
        ([3.0, 3.0, 2.5], [1.0, 2.0, 1.5], [2.5, 1.0, 1.0], 0.2),
    ] {
        let h = image_method_rir(&room(dims, source, mic, rt60, 400), FS).unwrap();
        let rt = schroeder_rt60(&h, FS as f64);
        assert!((rt / rt60 - 1.0).abs() < 0.2, "{dims:?}: measured rt60 {rt}, requested {rt60}");
    }
}

#[test]
fn room_impulse_response_is_deterministic_and_validated() {
    let r = room([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [4.0, 3.0, 2.0], 0.25, 10);
    assert_eq!(image_method_rir(&r, FS).unwrap(), image_method_rir(&r, FS).unwrap());
    let outside = room([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [4.0, 5.0, 2.0], 0.25, 10);
    assert!(image_method_rir(&outside, FS).is_err());
    let bad_rt = room([5.0, 4.0, 3.0], [1.0, 1.0, 1.0], [4.0, 3.0, 2.0], 0.0, 10);
    assert!(image_method_rir(&bad_rt, FS).is_err());
}

#[test]
fn ratio_gain_examples() {
    assert_eq!(ratio_gain(1.0, 1.0, 0.0), 1.0);
    assert!((ratio_gain(4.0, 1.0, -10.0) - 40f64.sqrt()).abs() < 1e-12);
    assert!((ratio_gain(4.0, 1.0, -10.0) - 6.3246).abs() < 1e-4);
}

#[test]
fn realized_ratios_match_request() {
    let src = sources(4 * FS as usize);
    for (ser, snr) in [(-10.0, 0.0), (0.0, 10.0), (15.0, 20.0)] {
        let m = mix(&src.s, &src.x, &src.v, &src.u, &src.h, &spec(Scenario::DoubleTalk, ser, snr)).unwrap();
        let got_ser = measured_ratio_db(&m.near, &m.echo, RatioWindow::BothActive).unwrap();
        let got_snr = measured_ratio_db(&m.near, &m.noise, RatioWindow::ReferenceActive).unwrap();
        assert!((got_ser - ser).abs() < 0.1, "ser {got_ser} vs {ser}");
        assert!((got_snr - snr).abs() < 0.1, "snr {got_snr} vs {snr}");
    }
}

#[test]
fn microphone_is_sum_of_components() {
    let src = sources(2 * FS as usize);
    for scenario in Scenario::ALL {
        let m = mix(&src.s, &src.x, &src.v, &src.u, &src.h, &spec(scenario, 5.0, 10.0)).unwrap();
        for i in 0..m.mic.len() {
            assert_eq!(m.mic[i], m.near[i] + m.echo[i] + m.noise[i]);
        }
    }
}

#[test]
fn silent_echo_and_noise_leave_near_speech() {
    let src = sources(FS as usize);
    let zero = vec![0.0; src.s.len()];
    let m = mix(&src.s, &zero, &zero, &zero, &src.h, &spec(Scenario::NearSingleTalk, 0.0, 10.0)).unwrap();
    assert_eq!(m.mic, src.s);
}

#[test]
fn silent_near_speech_with_finite_ser_is_an_error() {
    let src = sources(FS as usize);
    let zero = vec![0.0; src.s.len()];
    assert!(mix(&zero, &src.x, &src.v, &src.u, &src.h, &spec(Scenario::DoubleTalk, 0.0, 10.0)).is_err());
}

#[test]
fn scenarios_zero_the_right_signals() {
    let src = sources(2 * FS as usize);
    let fe = mix(&src.s, &src.x, &src.v, &src.u, &src.h, &spec(Scenario::FarSingleTalk, 0.0, 20.0)).unwrap();
    assert!(fe.near.iter().all(|&v| v == 0.0));
    assert!(fe.near_labels.iter().all(|&b| !b));
    assert!(fe.far_labels.iter().any(|&b| b));
    let got = measured_ratio_db(&fe.echo, &fe.noise, RatioWindow::ReferenceActive).unwrap();
    assert!((got - 20.0).abs() < 0.1);
    let ne = mix(&src.s, &src.x, &src.v, &src.u, &src.h, &spec(Scenario::NearSingleTalk, 0.0, 20.0)).unwrap();
    assert!(ne.echo.iter().all(|&v| v == 0.0));
    assert!(ne.far.iter().all(|&v| v == 0.0));
    assert!(ne.far_labels.iter().all(|&b| !b));
}

#[test]
fn mismatched_lengths_are_rejected() {
    let src = sources(FS as usize);
    assert!(mix(&src.s[..100], &src.x, &src.v, &src.u, &src.h, &spec(Scenario::DoubleTalk, 0.0, 10.0)).is_err());
}

#[test]
fn silence_has_no_activity() {
    assert!(vad_labels(&vec![0.0; 4800], LABEL_FRAME, LABEL_HOP).iter().all(|&b| !b));
    // peak −70 dBFS: under the absolute floor
    let quiet: Vec<f64> = (0..4800).map(|i| 10f64.powf(-3.5) * (i as f64 * 0.3).sin() * 2f64.sqrt()).collect();
    assert!(vad_labels(&quiet, LABEL_FRAME, LABEL_HOP).iter().all(|&b| !b));
}

#[test]
fn tone_burst_is_active_only_where_it_sounds() {
    let mut w = vec![0.0; 9600];
    for (i, v) in w.iter_mut().enumerate().skip(3840).take(1920) {
        *v = 0.5 * (2.0 * PI * 440.0 * i as f64 / 48_000.0).sin();
    }
    let labels = vad_labels(&w, LABEL_FRAME, LABEL_HOP);
    let want: Vec<bool> = (0..labels.len())
        .map(|t| {
            let (a, b) = (t * LABEL_HOP, t * LABEL_HOP + LABEL_FRAME);
            a < 5760 && b > 3840
        })
        .collect();
    assert_eq!(labels, want);
}

#[test]
fn frame_exactly_forty_db_down_is_inactive() {
    // one-sample frames: powers 1e4, 1 (exactly −40 dB), and just above
    let labels = vad_labels(&[100.0, 1.0, 1.0 + 1e-9, 0.5], 1, 1);
    assert_eq!(labels, vec![true, false, true, false]);
}

#[test]
fn synthetic_speech_has_pauses() {
    let s = sig(9, SynthKind::Speech, 6 * FS as usize);
    let labels = vad_labels(&s, LABEL_FRAME, LABEL_HOP);
    let active = labels.iter().filter(|&&b| b).count() as f64 / labels.len() as f64;
    assert!(active > 0.3 && active < 0.97, "active share {active}");
    let peak = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!((peak - 0.5).abs() < 1e-12);
    let n = sig(9, SynthKind::Noise, FS as usize);
    let rms = (n.iter().map(|v| v * v).sum::<f64>() / n.len() as f64).sqrt();
    assert!((rms - 0.1).abs() < 1e-12);
}

#[test]
fn scenario_counts_follow_shares() {
    assert_eq!(scenario_counts(15), (4, 4, 7));
    assert_eq!(scenario_counts(1500), (400, 400, 700));
    assert_eq!(scenario_counts(0), (0, 0, 0));
}

fn small_ranges() -> DataRanges {
    DataRanges {
        rt60: (0.15, 0.25),
        max_order: 6,
        duration_s: 1.0,
        delay: (0, 480),
        ..DataRanges::default()
    }
}

#[test]
fn manifest_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let pool = SourcePool::default();
    let a = build_manifest(&pool, 15, &DataRanges::default(), 7).unwrap();
    let b = build_manifest(&pool, 15, &DataRanges::default(), 7).unwrap();
    let (pa, pb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_manifest(&pa, &a).unwrap();
    write_manifest(&pb, &b).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    assert_eq!(read_manifest(&pa).unwrap(), a);

    let count = |rs: &[ClipRecord], s: Scenario| rs.iter().filter(|r| r.mix.scenario == s).count();
    assert_eq!(count(&a, Scenario::FarSingleTalk), 4);
    assert_eq!(count(&a, Scenario::NearSingleTalk), 4);
    assert_eq!(count(&a, Scenario::DoubleTalk), 7);

    let c = build_manifest(&pool, 15, &DataRanges::default(), 8).unwrap();
    assert_ne!(a, c);
    assert_eq!(count(&c, Scenario::DoubleTalk), 7);
}

#[test]
fn manifest_draws_stay_in_range() {
    let r = DataRanges::default();
    for rec in build_manifest(&SourcePool::default(), 40, &r, 3).unwrap() {
        assert!((r.ser_db.0..=r.ser_db.1).contains(&rec.mix.ser_db));
        assert!((r.snr_near_db.0..=r.snr_near_db.1).contains(&rec.mix.snr_near_db));
        assert!((r.snr_far_db.0..=r.snr_far_db.1).contains(&rec.mix.snr_far_db));
        assert!(rec.mix.delay <= r.delay.1);
        assert!((r.rt60.0..=r.rt60.1).contains(&rec.room.rt60));
        rec.room.validate().unwrap();
        for a in 0..3 {
            assert!((r.dims_lo[a]..=r.dims_hi[a]).contains(&rec.room.dims[a]));
        }
    }
}

#[test]
fn rendering_writes_clips_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let recs = build_manifest(&SourcePool::default(), 3, &small_ranges(), 11).unwrap();
    let out = render_all(&recs, dir.path()).unwrap();
    for (rec, done) in recs.iter().zip(&out) {
        let files = done.files.as_ref().unwrap();
        let mic = subband_aec::signal::wav::read_wav(dir.path().join(&files.mic)).unwrap();
        assert_eq!(mic.len(), FS as usize);
        let m = render_clip(rec).unwrap();
        for (a, b) in mic.samples().iter().zip(&m.mic) {
            assert!((a - b).abs() < 1e-6);
        }
        let near = labels_from_string(done.near_labels.as_ref().unwrap()).unwrap();
        assert_eq!(near, m.near_labels);
        assert_eq!(near.len(), (FS as usize - LABEL_FRAME) / LABEL_HOP + 1);
    }
}

#[test]
fn file_sources_are_looped() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.wav");
    let w = subband_aec::signal::Waveform::new(vec![0.25, -0.5, 0.125], FS).unwrap();
    subband_aec::signal::wav::write_wav(&p, &w, subband_aec::signal::wav::WavFormat::Float32).unwrap();
    let got = load_source(&SourceRef::File { path: p }, 7).unwrap();
    assert_eq!(got, vec![0.25, -0.5, 0.125, 0.25, -0.5, 0.125, 0.25]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn labels_round_trip_through_text(bits in proptest::collection::vec(any::<bool>(), 0..64)) {
        prop_assert_eq!(labels_from_string(&labels_to_string(&bits)).unwrap(), bits);
    }

    #[test]
    fn ratio_gain_meets_target(p_ref in 1e-6f64..1.0, p_int in 1e-6f64..1.0, r in -20f64..40.0) {
        let g = ratio_gain(p_ref, p_int, r);
        let got = 10.0 * (p_ref / (g * g * p_int)).log10();
        prop_assert!((got - r).abs() < 1e-9);
    }

    #[test]
    fn labels_ignore_overall_gain(seed in 0u64..1000, gain_db in 0f64..12.0) {
        let s = sig(seed, SynthKind::Speech, 24_000);
        let g = 10f64.powf(gain_db / 20.0);
        let scaled: Vec<f64> = s.iter().map(|v| v * g).collect();
        prop_assert_eq!(vad_labels(&s, LABEL_FRAME, LABEL_HOP), vad_labels(&scaled, LABEL_FRAME, LABEL_HOP));
    }
}
