//! Shared oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband_aec::autodiff::{Tape, Tensor, Var};

pub mod net;
pub mod ops;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, -1.0, 1.0)
}

/// Contracts `y` with fixed random weights so the scalar loss exercises the
/// whole Jacobian.
fn contract(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Var {
    let r = tape.constant(weights.clone());
    let p = tape.mul(y, r).unwrap();
    tape.sum_all(p)
}

/// Compares reverse-mode gradients with central finite differences for
/// every input tensor. Returns the worst relative error, measured per input
/// as ‖analytic − numeric‖₂ / max(‖numeric‖₂, 1e-8). At most `max_probe`
/// elements per input are perturbed.
pub fn grad_check<F>(inputs: &[Tensor<f64>], seed: u64, max_probe: usize, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut r = rng(seed ^ 0x5eed);
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let y = build(&mut tape, &vars);
        tape.shape(y).to_vec()
    };
    let weights = randn(&mut r, &out_shape);
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let y = build(&mut tape, &vars);
        let l = contract(&mut tape, y, &weights);
        tape.value(l).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = build(&mut tape, &vars);
    let l = contract(&mut tape, y, &weights);
    let grads = tape.backward(l).unwrap();

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let analytic: Vec<f64> = grads
            .get(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        let probes: Vec<usize> = if n <= max_probe {
            (0..n).collect()
        } else {
            (0..max_probe).map(|_| r.gen_range(0..n)).collect()
        };
        let (mut diff, mut norm) = (0.0, 0.0);
        for &i in &probes {
            let mut ins = inputs.to_vec();
            ins[k].data_mut()[i] += FD_STEP;
            let plus = eval(&ins);
            ins[k].data_mut()[i] -= 2.0 * FD_STEP;
            let minus = eval(&ins);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            diff += (analytic[i] - numeric).powi(2);
            norm += numeric * numeric;
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-8));
    }
    worst
}
