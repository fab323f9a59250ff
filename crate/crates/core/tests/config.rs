use std::path::PathBuf;

use subband_aec::config::{AppConfig, KeyValues};

#[test]
fn empty_file_gives_defaults() {
    assert_eq!(AppConfig::parse("").unwrap(), AppConfig::default());
    assert_eq!(AppConfig::parse("# only a comment\n\n").unwrap(), AppConfig::default());
}

#[test]
fn dotted_keys_reach_their_fields() {
    let c = AppConfig::parse(
        "nlms.step = 0.25\n\
         net.channels = 16   # trailing comment\n\
         net.mask_bound = 2\n\
         train.lr = 0.001\n\
         train.steps_per_epoch = 7\n\
         pipeline.checkpoint = runs/a/last.ckpt\n\
         datagen.ser_db = -5, 10\n\
         datagen.dims_lo = 3, 3, 2.2\n\
         tde.enabled = false\n",
    )
    .unwrap();
    assert_eq!(c.pipeline.linear.nlms.step, 0.25);
    assert_eq!(c.network.channels, 16);
    assert_eq!(c.network.mask_bound, Some(2.0));
    assert_eq!(c.train.lr, 0.001);
    assert_eq!(c.train.steps_per_epoch, Some(7));
    assert_eq!(c.pipeline.checkpoint, Some(PathBuf::from("runs/a/last.ckpt")));
    assert_eq!(c.data.ranges.ser_db, (-5.0, 10.0));
    assert_eq!(c.data.ranges.dims_lo, [3.0, 3.0, 2.2]);
    assert_eq!(c.pipeline.linear.max_lag, None);
}

#[test]
fn network_bins_follow_stft_geometry() {
    let c = AppConfig::parse("stft.fft_size = 512\nstft.win = 480\nstft.hop = 240\nnlms.block = 960\n").unwrap();
    assert_eq!(c.network.freq_bins, 256);
}

#[test]
fn unknown_keys_are_rejected() {
    let err = AppConfig::parse("nlms.stepp = 0.5\n").unwrap_err().to_string();
    assert!(err.contains("nlms.stepp"), "{err}");
}

#[test]
fn malformed_lines_are_rejected() {
    assert!(AppConfig::parse("nlms.step 0.5\n").is_err());
    assert!(AppConfig::parse("nlms.step = fast\n").is_err());
    assert!(AppConfig::parse("nlms.step = 0.5\nnlms.step = 0.6\n").is_err());
    assert!(AppConfig::parse("datagen.ser_db = 1\n").is_err());
    assert!(AppConfig::parse("datagen.dims_lo = 1, 2\n").is_err());
}

#[test]
fn inconsistent_values_fail_validation() {
    assert!(AppConfig::parse("pipeline.linear_only = true\npipeline.neural_only = true\n").is_err());
    assert!(AppConfig::parse("train.batch = 0\n").is_err());
    assert!(AppConfig::parse("eval.rtf_seconds = 0\n").is_err());
    // Block must hold a whole number of sub-band hops.
    assert!(AppConfig::parse("nlms.block = 1000\n").is_err());
}

#[test]
fn key_values_track_unread_keys() {
    let kv = KeyValues::parse("a.b = 1\nc.d = x, y\n").unwrap();
    assert_eq!(kv.get::<i32>("a.b").unwrap(), Some(1));
    assert_eq!(kv.unused(), ["c.d"]);
    assert_eq!(kv.get_list::<String>("c.d").unwrap().unwrap(), ["x", "y"]);
    assert!(kv.unused().is_empty());
    assert_eq!(kv.get::<i32>("missing").unwrap(), None);
}

#[test]
fn shipped_configs_parse() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "conf") {
            AppConfig::load(&p).unwrap_or_else(|err| panic!("{}: {err}", p.display()));
            n += 1;
        }
    }
    assert!(n > 0);
}
