mod common;

use common::{grad_check, randn, rng};
use proptest::prelude::*;
use subband_aec::autodiff::{Tape, Tensor, Var};
use subband_aec::losses::{
    final_loss, loss_asym, loss_dtd, loss_echo, loss_echo_aware, loss_mask, multitask, LossConfig, LossReport,
    TrainingTargets,
};
use subband_aec::stfgcrn::{Heads, NetState, NetworkConfig, Stfgcrn};

const C: f64 = 0.3;
const BETA: f64 = 0.3;
const LAMBDA: f64 = 2.0;

fn t3(data: Vec<f64>, b: usize, t: usize, f: usize) -> Tensor<f64> {
    Tensor::new(&[b, t, f], data).unwrap()
}

fn eval2(
    est: (&Tensor<f64>, &Tensor<f64>),
    target: (&Tensor<f64>, &Tensor<f64>),
    f: impl Fn(&mut Tape<f64>, (Var, Var), (Var, Var)) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let e = (tape.constant(est.0.clone()), tape.constant(est.1.clone()));
    let s = (tape.constant(target.0.clone()), tape.constant(target.1.clone()));
    let l = f(&mut tape, e, s);
    tape.value(l).item()
}

/// Per-band sum over (t, f) divided by T·F, averaged over bands.
fn band_mean(b: usize, t: usize, f: usize, term: impl Fn(usize) -> f64) -> f64 {
    let mut total = 0.0;
    for band in 0..b {
        let mut s = 0.0;
        for i in 0..t * f {
            s += term(band * t * f + i);
        }
        total += s / (t * f) as f64;
    }
    total / b as f64
}

fn mag(re: f64, im: f64) -> f64 {
    (re * re + im * im).sqrt()
}

fn compress(re: f64, im: f64) -> (f64, f64) {
    let m = mag(re, im);
    if m == 0.0 {
        (0.0, 0.0)
    } else {
        let k = m.powf(C) / m;
        (re * k, im * k)
    }
}

fn mask_term(er: f64, ei: f64, sr: f64, si: f64) -> f64 {
    let dm = mag(er, ei).powf(C) - mag(sr, si).powf(C);
    let (a, b) = (compress(er, ei), compress(sr, si));
    dm * dm + BETA * ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2))
}

struct Case {
    b: usize,
    t: usize,
    f: usize,
    e: (Tensor<f64>, Tensor<f64>),
    s: (Tensor<f64>, Tensor<f64>),
    z: (Tensor<f64>, Tensor<f64>),
}

fn case(seed: u64, b: usize, t: usize, f: usize) -> Case {
    let mut r = rng(seed);
    let mut pair = || (randn(&mut r, &[b, t, f]), randn(&mut r, &[b, t, f]));
    Case { b, t, f, e: pair(), s: pair(), z: pair() }
}

fn targets(c: &Case, near: Vec<f64>, far: Vec<f64>) -> TrainingTargets<f64> {
    TrainingTargets {
        s_re: c.s.0.clone(),
        s_im: c.s.1.clone(),
        z_re: c.z.0.clone(),
        z_im: c.z.1.clone(),
        near,
        far,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn echo_loss_examples() {
    let z = t3(vec![0.5, -1.0], 1, 1, 2);
    let v = eval2((&z, &z), (&z, &z), |t, e, s| loss_echo(t, e, s).unwrap());
    assert_eq!(v, 0.0);
    let (er, ei) = (t3(vec![3.0], 1, 1, 1), t3(vec![4.0], 1, 1, 1));
    let zero = t3(vec![0.0], 1, 1, 1);
    let v = eval2((&er, &ei), (&zero, &zero), |t, e, s| loss_echo(t, e, s).unwrap());
    assert!((v - 5.0).abs() < 1e-12);
}

#[test]
fn echo_loss_matches_scalar_loop() {
    let c = case(1, 3, 5, 7);
    let got = eval2((&c.e.0, &c.e.1), (&c.z.0, &c.z.1), |t, e, s| loss_echo(t, e, s).unwrap());
    let want = band_mean(c.b, c.t, c.f, |i| {
        mag(c.e.0.data()[i] - c.z.0.data()[i], c.e.1.data()[i] - c.z.1.data()[i])
    });
    assert!(rel(got, want) < 1e-9, "{got} {want}");
}

#[test]
fn dtd_examples() {
    let run = |p: &[f64], near: &[f64], q: &[f64], far: &[f64]| {
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::new(&[1, p.len()], p.to_vec()).unwrap());
        let qv = tape.constant(Tensor::new(&[1, q.len()], q.to_vec()).unwrap());
        let (d, n, f) = loss_dtd(&mut tape, pv, near, qv, far).unwrap();
        (tape.value(d).item(), tape.value(n).item(), tape.value(f).item())
    };
    let labels = [1.0, 0.0, 1.0, 1.0];
    let (d, _, _) = run(&labels, &labels, &[0.0, 1.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]);
    assert!(d < 1e-6, "{d}");
    let half = [0.5; 4];
    let (d, n, f) = run(&half, &labels, &half, &[0.0, 0.0, 1.0, 0.0]);
    assert!((n - 2f64.ln()).abs() < 1e-12 && (f - 2f64.ln()).abs() < 1e-12);
    assert!((d - 1.3863).abs() < 1e-4);
}

#[test]
fn dtd_matches_direct_formula_across_bands() {
    let mut r = rng(2);
    let (b, t) = (4, 9);
    let p = common::uniform(&mut r, &[b, t], 0.01, 0.99);
    let q = common::uniform(&mut r, &[b, t], 0.01, 0.99);
    let near: Vec<f64> = (0..t).map(|i| (i % 2) as f64).collect();
    let far: Vec<f64> = (0..t).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let mut tape = Tape::new();
    let (pv, qv) = (tape.constant(p.clone()), tape.constant(q.clone()));
    let (d, n, f) = loss_dtd(&mut tape, pv, &near, qv, &far).unwrap();
    let bce = |probs: &Tensor<f64>, labels: &[f64]| {
        let mut s = 0.0;
        for i in 0..b * t {
            let (x, y) = (probs.data()[i], labels[i % t]);
            s -= y * x.ln() + (1.0 - y) * (1.0 - x).ln();
        }
        s / (b * t) as f64
    };
    let (wn, wf) = (bce(&p, &near), bce(&q, &far));
    assert!(rel(tape.value(n).item(), wn) < 1e-12);
    assert!(rel(tape.value(f).item(), wf) < 1e-12);
    assert!(rel(tape.value(d).item(), wn + wf) < 1e-12);
}

#[test]
fn mask_loss_examples() {
    let c = case(3, 2, 3, 4);
    let v = eval2((&c.s.0, &c.s.1), (&c.s.0, &c.s.1), |t, e, s| loss_mask(t, e, s, &LossConfig::default()).unwrap());
    assert_eq!(v, 0.0);
    // Unit-magnitude estimate at varied phases against silence: 1 + β.
    let n = 12;
    let phase: Vec<f64> = (0..n).map(|i| i as f64 * 0.7).collect();
    let er = t3(phase.iter().map(|p| p.cos()).collect(), 1, 3, 4);
    let ei = t3(phase.iter().map(|p| p.sin()).collect(), 1, 3, 4);
    let zero = t3(vec![0.0; n], 1, 3, 4);
    let v = eval2((&er, &ei), (&zero, &zero), |t, e, s| loss_mask(t, e, s, &LossConfig::default()).unwrap());
    assert!((v - 1.3).abs() < 1e-12, "{v}");
}

#[test]
fn mask_loss_matches_scalar_loop() {
    let c = case(4, 3, 4, 5);
    let got = eval2((&c.e.0, &c.e.1), (&c.s.0, &c.s.1), |t, e, s| loss_mask(t, e, s, &LossConfig::default()).unwrap());
    let want = band_mean(c.b, c.t, c.f, |i| mask_term(c.e.0.data()[i], c.e.1.data()[i], c.s.0.data()[i], c.s.1.data()[i]));
    assert!(rel(got, want) < 1e-9);
}

fn grad_of(
    c: &Case,
    f: impl Fn(&mut Tape<f64>, (Var, Var), (Var, Var)) -> Var + Copy,
) -> f64 {
    let s = c.s.clone();
    grad_check(&[c.e.0.clone(), c.e.1.clone()], 5, 200, move |tape, v| {
        let sv = (tape.constant(s.0.clone()), tape.constant(s.1.clone()));
        f(tape, (v[0], v[1]), sv)
    })
}

#[test]
fn mask_loss_gradient_matches_finite_differences() {
    let c = case(5, 2, 3, 4);
    let err = grad_of(&c, |t, e, s| loss_mask(t, e, s, &LossConfig::default()).unwrap());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn mask_loss_gradient_is_finite_at_zero_estimate() {
    let c = case(6, 1, 2, 3);
    let mut tape = Tape::new();
    let e = (tape.param(Tensor::zeros(&[1, 2, 3])), tape.param(Tensor::zeros(&[1, 2, 3])));
    let s = (tape.constant(c.s.0.clone()), tape.constant(c.s.1.clone()));
    let l = loss_mask(&mut tape, e, s, &LossConfig::default()).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.get(e.0).unwrap().iter().chain(g.get(e.1).unwrap()).all(|v| v.is_finite()));
}

#[test]
fn echo_aware_collapses_to_mask_loss_without_echo() {
    let c = case(7, 2, 4, 3);
    let mut t = targets(&c, vec![0.0; 4], vec![0.0; 4]);
    t.z_re = Tensor::zeros(&[2, 4, 3]);
    t.z_im = Tensor::zeros(&[2, 4, 3]);
    let cfg = LossConfig::default();
    let mut tape = Tape::new();
    let e = (tape.constant(c.e.0.clone()), tape.constant(c.e.1.clone()));
    let aware = loss_echo_aware(&mut tape, e, &t, &cfg).unwrap();
    let s = (tape.constant(c.s.0.clone()), tape.constant(c.s.1.clone()));
    let plain = loss_mask(&mut tape, e, s, &cfg).unwrap();
    assert_eq!(tape.value(aware).item(), tape.value(plain).item());

    let mut tape = Tape::new();
    let e = (tape.constant(c.s.0.clone()), tape.constant(c.s.1.clone()));
    let t = targets(&c, vec![0.0; 4], vec![0.0; 4]);
    let l = loss_echo_aware(&mut tape, e, &t, &cfg).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
}

#[test]
fn echo_aware_two_bin_hand_case() {
    // Bin 0: S = 1, Z = 1 → w = 1 + 2·1/2 = 2, estimate 0.
    // Bin 1: S = 0, Z = 0 → w = 1, estimate i.
    let s = (t3(vec![1.0, 0.0], 1, 1, 2), t3(vec![0.0, 0.0], 1, 1, 2));
    let z = (t3(vec![1.0, 0.0], 1, 1, 2), t3(vec![0.0, 0.0], 1, 1, 2));
    let e = (t3(vec![0.0, 0.0], 1, 1, 2), t3(vec![0.0, 1.0], 1, 1, 2));
    let w0 = 1.0 + LAMBDA * 1.0 / (1.0 + 1.0 + 1e-8);
    let want = (w0 * mask_term(0.0, 0.0, 1.0, 0.0) + mask_term(0.0, 1.0, 0.0, 0.0)) / 2.0;
    let t = TrainingTargets {
        s_re: s.0,
        s_im: s.1,
        z_re: z.0,
        z_im: z.1,
        near: vec![0.0],
        far: vec![0.0],
    };
    let mut tape = Tape::new();
    let ev = (tape.constant(e.0), tape.constant(e.1));
    let l = loss_echo_aware(&mut tape, ev, &t, &LossConfig::default()).unwrap();
    assert!(rel(tape.value(l).item(), want) < 1e-12);
    assert!((want - (2.0 * 1.3 + 1.3) / 2.0).abs() < 1e-7);
}

#[test]
fn echo_aware_matches_scalar_loop_and_dominates_plain_loss() {
    let c = case(8, 3, 4, 6);
    let t = targets(&c, vec![0.0; 4], vec![0.0; 4]);
    let mut tape = Tape::new();
    let e = (tape.constant(c.e.0.clone()), tape.constant(c.e.1.clone()));
    let l = loss_echo_aware(&mut tape, e, &t, &LossConfig::default()).unwrap();
    let got = tape.value(l).item();
    let d = |x: &Tensor<f64>, i: usize| x.data()[i];
    let want = band_mean(c.b, c.t, c.f, |i| {
        let pz = d(&c.z.0, i).powi(2) + d(&c.z.1, i).powi(2);
        let ps = d(&c.s.0, i).powi(2) + d(&c.s.1, i).powi(2);
        let w = 1.0 + LAMBDA * pz / (pz + ps + 1e-8);
        w * mask_term(d(&c.e.0, i), d(&c.e.1, i), d(&c.s.0, i), d(&c.s.1, i))
    });
    assert!(rel(got, want) < 1e-9);
    let plain = eval2((&c.e.0, &c.e.1), (&c.s.0, &c.s.1), |t, e, s| loss_mask(t, e, s, &LossConfig::default()).unwrap());
    assert!(got >= plain);
}

#[test]
fn asym_examples_and_oracle() {
    let cfg = LossConfig::default();
    let c = case(9, 2, 3, 4);
    // Shrunk estimate: never above target.
    let shrink = |x: &Tensor<f64>| x.map(|v| 0.5 * v);
    let v = eval2((&shrink(&c.s.0), &shrink(&c.s.1)), (&c.s.0, &c.s.1), |t, e, s| loss_asym(t, e, s, &cfg).unwrap());
    assert_eq!(v, 0.0);
    let one = t3(vec![1.0; 6], 1, 2, 3);
    let zero = t3(vec![0.0; 6], 1, 2, 3);
    let v = eval2((&zero, &one), (&zero, &zero), |t, e, s| loss_asym(t, e, s, &cfg).unwrap());
    assert!((v - 1.0).abs() < 1e-12);
    let got = eval2((&c.e.0, &c.e.1), (&c.s.0, &c.s.1), |t, e, s| loss_asym(t, e, s, &cfg).unwrap());
    let want = band_mean(c.b, c.t, c.f, |i| {
        let d = mag(c.e.0.data()[i], c.e.1.data()[i]).powf(C) - mag(c.s.0.data()[i], c.s.1.data()[i]).powf(C);
        d.max(0.0).powi(2)
    });
    assert!(rel(got, want) < 1e-9);
}

#[test]
fn asym_gradient_away_from_hinge() {
    let c = case(10, 2, 3, 4);
    let margin = c
        .e
        .0
        .data()
        .iter()
        .zip(c.e.1.data())
        .zip(c.s.0.data().iter().zip(c.s.1.data()))
        .map(|((&a, &b), (&x, &y))| (mag(a, b).powf(C) - mag(x, y).powf(C)).abs())
        .fold(f64::INFINITY, f64::min);
    assert!(margin > 1e-3, "probe sits on the hinge");
    let err = grad_of(&c, |t, e, s| loss_asym(t, e, s, &LossConfig::default()).unwrap());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn echo_loss_gradient_matches_finite_differences() {
    let c = case(11, 2, 3, 4);
    let err = grad_of(&c, |t, e, s| loss_echo(t, e, s).unwrap());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn final_loss_weights() {
    assert_eq!(final_loss(1.0, 1.0, 1.0, 1.0, 1.0), 2.35);
    assert_eq!(final_loss(0.0, 0.0, 0.0, 0.0, 0.0), 0.0);
    let r = LossReport {
        echo_aware: 0.7,
        mask: 1.9,
        dtd: 0.4,
        echo: 3.1,
        asym: 0.05,
        ..Default::default()
    }
    .with_total();
    assert_eq!(r.total, 0.7 + 0.2 * 1.9 + 0.1 * 0.4 + 0.05 * 3.1 + 0.05);
}

#[test]
fn multitask_total_is_weighted_sum_of_reported_terms() {
    let cfg = NetworkConfig {
        channels: 4,
        fd_layers: 2,
        tfcm_layers: 1,
        freq_bins: 8,
        vad_channels: 2,
        ..NetworkConfig::default()
    };
    let net = Stfgcrn::<f64>::new(cfg, 3).unwrap();
    let mut r = rng(12);
    let (b, t, f) = (2, 5, 8);
    let x = randn(&mut r, &[b, 6, t, f]);
    let tg = TrainingTargets {
        s_re: randn(&mut r, &[b, t, f]),
        s_im: randn(&mut r, &[b, t, f]),
        z_re: randn(&mut r, &[b, t, f]),
        z_im: randn(&mut r, &[b, t, f]),
        near: vec![1.0, 0.0, 1.0, 1.0, 0.0],
        far: vec![0.0, 0.0, 1.0, 1.0, 1.0],
    };
    for heads in [Heads::ALL, Heads::MASK_ONLY] {
        let mut tape = Tape::new();
        let bound = net.params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = net.forward(&mut tape, &bound, xv, &mut NetState::new(), heads).unwrap();
        let terms = multitask(&mut tape, &out, &tg, &LossConfig::default()).unwrap();
        let rep = terms.report(&tape);
        assert_eq!(rep.total, final_loss(rep.echo_aware, rep.mask, rep.dtd, rep.echo, rep.asym));
        assert_eq!(rep.dtd, rep.dtd_near + rep.dtd_far);
        assert_eq!(heads.vad, rep.dtd > 0.0);
        assert_eq!(heads.echo, rep.echo > 0.0);
        let line = serde_json::to_string(&rep).unwrap();
        assert!(line.contains("\"final\""));
    }
}

#[test]
fn rejects_non_binary_labels() {
    let c = case(13, 1, 2, 8);
    let mut tg = targets(&c, vec![0.0, 0.5], vec![0.0, 1.0]);
    assert!(tg.validate().is_err());
    tg.near = vec![0.0];
    assert!(tg.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn losses_are_non_negative_and_vanish_at_target(seed in 0u64..10_000, b in 1usize..3, t in 1usize..4, f in 1usize..5) {
        let c = case(seed, b, t, f);
        let cfg = LossConfig::default();
        let tg = targets(&c, vec![0.0; t], vec![0.0; t]);
        for (est, zero) in [(&c.e, false), (&c.s, true)] {
            let mut tape = Tape::new();
            let e = (tape.constant(est.0.clone()), tape.constant(est.1.clone()));
            let s = (tape.constant(c.s.0.clone()), tape.constant(c.s.1.clone()));
            let vals = [
                loss_mask(&mut tape, e, s, &cfg).unwrap(),
                loss_asym(&mut tape, e, s, &cfg).unwrap(),
                loss_echo(&mut tape, e, s).unwrap(),
                loss_echo_aware(&mut tape, e, &tg, &cfg).unwrap(),
            ];
            for v in vals {
                let v = tape.value(v).item();
                prop_assert!(v >= 0.0);
                if zero {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }
}
