use subband_aec::config::AppConfig;
use subband_aec::datagen::{build_manifest, render_all, write_manifest, DataRanges, Scenario, SourcePool};
use subband_aec::eval::{ablate, ablation_table, evaluate, evaluate_clips, MetricsReport, Variant};
use subband_aec::pipeline::{Pipeline, PipelineConfig};
use subband_aec::stfgcrn::Stfgcrn;
use subband_aec::train::{load_clips, Clip};

fn ranges() -> DataRanges {
    DataRanges {
        duration_s: 1.0,
        rt60: (0.2, 0.3),
        max_order: 20,
        ..DataRanges::default()
    }
}

fn clips(n: usize, seed: u64) -> Vec<Clip> {
    build_manifest(&SourcePool::default(), n, &ranges(), seed)
        .unwrap()
        .iter()
        .map(|r| Clip::render(r).unwrap())
        .collect()
}

fn toy_app() -> AppConfig {
    AppConfig::parse(
        "net.channels = 4\nnet.fd_layers = 2\nnet.tfcm_layers = 1\nnet.vad_channels = 2\n\
         train.lr = 0.003\ntrain.epochs = 1\ntrain.batch = 2\ntrain.segment_s = 0.5\ntrain.steps_per_epoch = 2\n",
    )
    .unwrap()
}

#[test]
fn variant_names_parse_in_order() {
    let v = Variant::parse_list("base, +dsvad,+tfcm ,+echo").unwrap();
    assert_eq!(v, Variant::ALL.to_vec());
    assert!(Variant::parse_list("base,+magic").is_err());
    assert_eq!(Variant::parse_list("+tfcm").unwrap()[0].vad, true);
}

#[test]
fn ablation_rows_follow_variant_list_and_are_deterministic() {
    let set = clips(3, 1);
    let app = toy_app();

    let one = ablate(&set, &Variant::parse_list("base").unwrap(), &app).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(ablation_table(&one).lines().count(), 2);

    let all = ablate(&set, &Variant::ALL, &app).unwrap();
    let names: Vec<&str> = all.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["base", "+dsvad", "+tfcm", "+echo"]);
    assert_eq!(ablation_table(&all).lines().count(), 5);
    // Each toggle adds parameters.
    assert!(all.windows(2).all(|w| w[1].params > w[0].params));
    assert_eq!(all[0], one[0]);

    let again = ablate(&set, &Variant::ALL, &app).unwrap();
    assert_eq!(all, again);
}

#[test]
fn report_groups_scenarios_and_writes_records() {
    let set = clips(6, 2);
    let p = Pipeline::with_network(PipelineConfig::default(), Stfgcrn::new(toy_app().network, 0).unwrap()).unwrap();
    let report = evaluate(&p, &set, Some(0.2)).unwrap();
    assert_eq!(report.clips.len(), 6);
    assert_eq!(report.latency, 543);
    let rtf = report.rtf.unwrap();
    assert!(rtf.rtf > 0.0);

    let kinds: Vec<Option<Scenario>> = report.scenarios.iter().map(|s| s.scenario).collect();
    let expected: Vec<Option<Scenario>> = Scenario::ALL
        .iter()
        .filter(|s| set.iter().any(|c| c.scenario == Some(**s)))
        .map(|s| Some(*s))
        .collect();
    assert_eq!(kinds, expected);
    for c in &report.clips {
        let fst = c.scenario == Some(Scenario::FarSingleTalk);
        assert_eq!(c.erle_db.is_some(), fst);
        assert!(c.erle_db.is_none_or(|e| e <= 100.0));
    }

    let mut buf = Vec::new();
    report.write_jsonl(&mut buf).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6 + report.scenarios.len() + 1);
    assert_eq!(lines.last().unwrap()["type"], "summary");
    assert!(report.table().contains("latency 543"));
}

#[test]
fn report_without_far_single_talk_has_no_erle() {
    let r = MetricsReport::new(Vec::new(), None, 0);
    assert_eq!(r.erle_db, None);
    assert!(r.scenarios.is_empty());
}

#[test]
fn rendered_manifest_loads_the_same_clips() {
    let dir = tempfile::tempdir().unwrap();
    let records = build_manifest(&SourcePool::default(), 2, &ranges(), 3).unwrap();
    let rendered = render_all(&records, dir.path()).unwrap();
    let path = dir.path().join("manifest.jsonl");
    write_manifest(&path, &rendered).unwrap();
    let loaded = load_clips(&path).unwrap();
    for (a, r) in loaded.iter().zip(&records) {
        let b = Clip::render(r).unwrap();
        assert_eq!(a.id, b.id);
        assert_eq!(a.near_labels, b.near_labels);
        assert_eq!(a.far_labels, b.far_labels);
        // Stored as 32-bit float.
        assert!(a.mic.iter().zip(&b.mic).all(|(x, y)| (x - y).abs() <= 1e-6 * y.abs().max(1e-3)));
    }
}

#[test]
fn unrendered_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    write_manifest(&path, &build_manifest(&SourcePool::default(), 1, &ranges(), 3).unwrap()).unwrap();
    assert!(load_clips(&path).is_err());
}

#[test]
fn linear_only_report_matches_linear_columns() {
    let set = clips(3, 4);
    let cfg = PipelineConfig {
        linear_only: true,
        ..PipelineConfig::default()
    };
    let p = Pipeline::new(cfg).unwrap();
    for m in evaluate_clips(&p, &set).unwrap() {
        assert_eq!(m.erle_db, m.erle_linear_db);
        assert_eq!(m.near_snr_db, m.near_snr_linear_db);
    }
}
