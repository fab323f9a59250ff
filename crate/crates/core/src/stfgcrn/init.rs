//! Parameter shapes and initialization.

use super::NetworkConfig;
use crate::autodiff::{ModelParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const PRELU_SLOPE: f64 = 0.25;

struct Init {
    rng: ChaCha8Rng,
    params: ModelParams<f64>,
}

impl Init {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.params.insert(name, Tensor::new(shape, data).expect("shape"));
    }

    fn constant(&mut self, name: String, shape: &[usize], v: f64) {
        self.params.insert(name, Tensor::full(shape, v));
    }

    /// Kaiming-uniform for a PReLU-followed layer.
    fn kaiming(&mut self, name: String, shape: &[usize], fan_in: usize) {
        let gain = (2.0 / (1.0 + PRELU_SLOPE * PRELU_SLOPE)).sqrt();
        self.uniform(name, shape, gain * (3.0 / fan_in as f64).sqrt());
    }

    fn conv(&mut self, prefix: &str, cout: usize, cin: usize, k: (usize, usize)) {
        self.kaiming(format!("{prefix}.w"), &[cout, cin, k.0, k.1], cin * k.0 * k.1);
        self.constant(format!("{prefix}.b"), &[cout], 0.0);
    }

    /// Transposed-conv weights are stored tap-major, `[KT, C_in, C_out, KF]`.
    fn conv_t(&mut self, prefix: &str, cin: usize, cout: usize, k: (usize, usize), stride: usize) {
        let fan_in = (cin * k.0 * k.1 / stride).max(1);
        self.kaiming(format!("{prefix}.w"), &[k.0, cin, cout, k.1], fan_in);
        self.constant(format!("{prefix}.b"), &[cout], 0.0);
    }

    fn norm(&mut self, prefix: &str, shape: &[usize]) {
        self.constant(format!("{prefix}.gamma"), shape, 1.0);
        self.constant(format!("{prefix}.beta"), shape, 0.0);
    }

    fn prelu(&mut self, prefix: &str, c: usize) {
        self.constant(format!("{prefix}.alpha"), &[c], PRELU_SLOPE);
    }

    fn gated(&mut self, prefix: &str, cin: usize, cout: usize, cfg: &NetworkConfig, bins: usize, transposed: bool) {
        for branch in ["conv_a", "conv_g"] {
            let p = format!("{prefix}.{branch}");
            if transposed {
                self.conv_t(&p, cin, cout, cfg.kernel, cfg.freq_stride);
            } else {
                self.conv(&p, cout, cin, cfg.kernel);
            }
        }
        self.norm(&format!("{prefix}.ln"), &[cout, bins]);
        self.prelu(&format!("{prefix}.act"), cout);
    }

    fn tfcm(&mut self, prefix: &str, c: usize, layers: usize) {
        for i in 0..layers {
            let p = format!("{prefix}.{i}");
            self.conv(&format!("{p}.pw1"), c, c, (1, 1));
            self.conv(&format!("{p}.dw"), c, 1, (3, 3));
            self.conv(&format!("{p}.pw2"), c, c, (1, 1));
            self.prelu(&format!("{p}.act"), c);
            self.norm(&format!("{p}.ln"), &[c]);
        }
    }

    fn orthogonal(&mut self, n: usize) -> Vec<f64> {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        while rows.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
            for r in &rows {
                let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(r) {
                    *x -= d * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                rows.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        rows.concat()
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) {
        let bound = 1.0 / (hidden as f64).sqrt();
        self.uniform(format!("{prefix}.w_ih"), &[4 * hidden, input], bound);
        let w_hh: Vec<f64> = (0..4).flat_map(|_| self.orthogonal(hidden)).collect();
        self.params
            .insert(format!("{prefix}.w_hh"), Tensor::new(&[4 * hidden, hidden], w_hh).expect("shape"));
        self.constant(format!("{prefix}.bias"), &[4 * hidden], 0.0);
    }

    fn dense(&mut self, prefix: &str, out: usize, input: usize) {
        self.uniform(format!("{prefix}.w"), &[out, input], (3.0 / input as f64).sqrt());
        self.constant(format!("{prefix}.b"), &[out], 0.0);
    }
}

pub(super) fn init_params(cfg: &NetworkConfig, seed: u64) -> ModelParams<f64> {
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: ModelParams::new(),
    };
    let c = cfg.channels;
    for l in 0..cfg.fd_layers {
        let cin = if l == 0 { cfg.input_channels } else { c };
        init.gated(&format!("enc.{l}"), cin, c, cfg, cfg.bins_after(l), false);
        if cfg.use_tfcm {
            init.tfcm(&format!("enc.{l}.tfcm"), c, cfg.tfcm_layers);
        }
    }
    for block in ["f", "t"] {
        init.lstm(&format!("lstm.{block}.lstm"), c, c);
        init.dense(&format!("lstm.{block}.fc"), c, c);
        init.norm(&format!("lstm.{block}.ln"), &[c]);
    }
    let mut decoders = vec!["mask"];
    if cfg.use_echo_decoder {
        decoders.push("echo");
    }
    for name in decoders {
        for j in 0..cfg.fd_layers {
            let prefix = format!("{name}.{j}");
            let bins = cfg.bins_after(cfg.fd_layers - 1 - j) * cfg.freq_stride;
            init.conv(&format!("{prefix}.skip"), c, c, (1, 1));
            init.gated(&prefix, 2 * c, c, cfg, bins, true);
            if cfg.use_tfcm {
                init.tfcm(&format!("{prefix}.tfcm"), c, cfg.tfcm_layers);
            }
        }
        init.conv_t(&format!("{name}.out"), c, 2, cfg.kernel, 1);
    }
    // Start the mask near 1 + 0i so the untrained post-filter passes the
    // linear-stage output through.
    let w = init.params.get_mut("mask.out.w").expect("mask output");
    for v in w.data_mut() {
        *v *= 0.1;
    }
    init.params
        .get_mut("mask.out.b")
        .expect("mask bias")
        .data_mut()
        .copy_from_slice(&[1.0, 0.0]);
    if cfg.use_vad {
        for head in ["near", "far"] {
            init.conv(&format!("vad.{head}.conv"), cfg.vad_channels, c, (1, 1));
            init.dense(&format!("vad.{head}.fc"), 1, cfg.vad_channels);
        }
    }
    init.params
}
