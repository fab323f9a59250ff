//! Finite-difference sweep over every differentiable tape operator.

use super::{grad_check, randn, rng, uniform};
use rand::Rng;
use subband_aec::autodiff::{ConvSpec, LstmWeights, Tape, Tensor, Var};

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

fn random_spec(r: &mut impl Rng) -> ConvSpec {
    ConvSpec::default()
        .with_stride(r.gen_range(1..=2), r.gen_range(1..=2))
        .with_dilation(r.gen_range(1..=2), r.gen_range(1..=2))
        .with_padding([r.gen_range(0..=2), r.gen_range(0..=1), r.gen_range(0..=2), r.gen_range(0..=2)])
}

fn away_from_zero(mut x: Tensor<f64>) -> Tensor<f64> {
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    x
}

/// One random instance of operator `name`: inputs and graph builder.
fn instance(name: &str, seed: u64) -> (Vec<Tensor<f64>>, Build) {
    let mut r = rng(0xacce_u64.wrapping_mul(seed + 1) ^ name.len() as u64);
    let r = &mut r;
    let x4 = |r: &mut _| away_from_zero(randn(r, &[2, 3, 4, 2]));
    match name {
        "conv2d" => {
            let spec = random_spec(r);
            let (cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=3));
            let ins = vec![randn(r, &[2, cin, 5, 7]), randn(r, &[cout, cin, 2, 3]), randn(r, &[cout])];
            (ins, Box::new(move |tp, v| tp.conv2d(v[0], v[1], Some(v[2]), spec).unwrap()))
        }
        "conv2d_grouped" => {
            let spec = random_spec(r).with_groups(2);
            let ins = vec![randn(r, &[2, 4, 6, 6]), randn(r, &[4, 2, 3, 3]), randn(r, &[4])];
            (ins, Box::new(move |tp, v| tp.conv2d(v[0], v[1], Some(v[2]), spec).unwrap()))
        }
        "conv_transpose2d" => {
            let spec = random_spec(r);
            let ins = vec![randn(r, &[2, 2, 4, 5]), randn(r, &[2, 3, 2, 3]), randn(r, &[3])];
            (ins, Box::new(move |tp, v| tp.conv_transpose2d(v[0], v[1], Some(v[2]), spec).unwrap()))
        }
        "linear" => {
            let ins = vec![randn(r, &[3, 2, 5]), randn(r, &[4, 5]), randn(r, &[4])];
            (ins, Box::new(|tp, v| tp.linear(v[0], v[1], Some(v[2])).unwrap()))
        }
        "sigmoid" => (vec![x4(r)], Box::new(|tp, v| tp.sigmoid(v[0]))),
        "tanh" => (vec![x4(r)], Box::new(|tp, v| tp.tanh(v[0]))),
        "relu" => (vec![x4(r)], Box::new(|tp, v| tp.relu(v[0]))),
        "scale" => (vec![x4(r)], Box::new(|tp, v| tp.scale(v[0], -1.7))),
        "add_scalar" => (vec![x4(r)], Box::new(|tp, v| tp.add_scalar(v[0], 0.3))),
        "sum_all" => (vec![x4(r)], Box::new(|tp, v| tp.sum_all(v[0]))),
        "mean_all" => (vec![x4(r)], Box::new(|tp, v| tp.mean_all(v[0]))),
        "mean_axis" => (vec![x4(r)], Box::new(|tp, v| tp.mean_axis(v[0], 2).unwrap())),
        "permute" => (vec![x4(r)], Box::new(|tp, v| tp.permute(v[0], &[2, 0, 3, 1]).unwrap())),
        "reshape" => (vec![x4(r)], Box::new(|tp, v| tp.reshape(v[0], &[6, 8]).unwrap())),
        "slice" => (vec![x4(r)], Box::new(|tp, v| tp.slice(v[0], 2, 1, 2).unwrap())),
        "pad" => (vec![x4(r)], Box::new(|tp, v| tp.pad(v[0], &[(0, 0), (2, 1), (0, 3), (1, 0)]).unwrap())),
        "split" => (
            vec![x4(r)],
            Box::new(|tp, v| {
                let parts = tp.split(v[0], 1, &[1, 2]).unwrap();
                let s = tp.scale(parts[0], 2.0);
                let p = tp.slice(parts[1], 1, 0, 1).unwrap();
                tp.mul(s, p).unwrap()
            }),
        ),
        "add" | "sub" | "mul" => {
            let ins = vec![randn(r, &[2, 3, 4]), randn(r, &[2, 3, 4])];
            let b: Build = match name {
                "add" => Box::new(|tp, v| tp.add(v[0], v[1]).unwrap()),
                "sub" => Box::new(|tp, v| tp.sub(v[0], v[1]).unwrap()),
                _ => Box::new(|tp, v| tp.mul(v[0], v[1]).unwrap()),
            };
            (ins, b)
        }
        "concat" => {
            let ins = vec![randn(r, &[2, 3, 4]), randn(r, &[2, 1, 4])];
            (ins, Box::new(|tp, v| tp.concat(&[v[0], v[1]], 1).unwrap()))
        }
        "prelu" => {
            let ins = vec![x4(r), uniform(r, &[3], 0.1, 0.4)];
            (ins, Box::new(|tp, v| tp.prelu(v[0], v[1]).unwrap()))
        }
        "cmag_pow" => {
            let p = r.gen_range(0.2..2.0);
            let ins = vec![randn(r, &[3, 4]), randn(r, &[3, 4])];
            (ins, Box::new(move |tp, v| tp.cmag_pow(v[0], v[1], p).unwrap()))
        }
        "ccompress" => {
            let imag = seed % 2 == 1;
            let ins = vec![randn(r, &[3, 4]), randn(r, &[3, 4])];
            (ins, Box::new(move |tp, v| tp.ccompress(v[0], v[1], 0.3, imag).unwrap()))
        }
        "bce_mean" => {
            let target: Vec<f64> = (0..6).map(|_| f64::from(r.gen_range(0..2u8))).collect();
            let ins = vec![uniform(r, &[6], 0.05, 0.95)];
            (ins, Box::new(move |tp, v| tp.bce_mean(v[0], &target).unwrap()))
        }
        "layer_norm" => {
            let ins = vec![randn(r, &[2, 3, 2, 4]), uniform(r, &[3, 4], 0.5, 1.5), randn(r, &[3, 4])];
            (ins, Box::new(|tp, v| tp.layer_norm(v[0], &[1, 3], Some(v[1]), Some(v[2])).unwrap()))
        }
        "lstm" => {
            let mut u = |shape: &[usize]| uniform(r, shape, -0.5, 0.5);
            let ins = vec![u(&[2, 5, 3]), u(&[16, 3]), u(&[16, 4]), u(&[16])];
            (
                ins,
                Box::new(|tp, v| {
                    let w = LstmWeights {
                        w_ih: v[1],
                        w_hh: v[2],
                        bias: v[3],
                    };
                    let (y, last) = tp.lstm_seq(v[0], &w, None).unwrap();
                    let c = tp.reshape(last.c, &[2, 1, 4]).unwrap();
                    tp.concat(&[y, c], 1).unwrap()
                }),
            )
        }
        other => panic!("no instance generator for {other}"),
    }
}

pub const OPERATORS: [&str; 27] = [
    "conv2d",
    "conv2d_grouped",
    "conv_transpose2d",
    "linear",
    "sigmoid",
    "tanh",
    "relu",
    "scale",
    "add_scalar",
    "sum_all",
    "mean_all",
    "mean_axis",
    "permute",
    "reshape",
    "slice",
    "pad",
    "split",
    "add",
    "sub",
    "mul",
    "concat",
    "prelu",
    "cmag_pow",
    "ccompress",
    "bce_mean",
    "layer_norm",
    "lstm",
];

/// Worst relative gradient error of each operator over `instances` random
/// instances.
pub fn operator_suite(instances: u64) -> Vec<(&'static str, f64)> {
    OPERATORS
        .into_iter()
        .map(|name| {
            let worst = (0..instances)
                .map(|seed| {
                    let (ins, build) = instance(name, seed);
                    grad_check(&ins, seed, 48, build)
                })
                .fold(0.0f64, f64::max);
            (name, worst)
        })
        .collect()
}
