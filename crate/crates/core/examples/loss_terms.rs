//! Evaluate each training loss on a hand-made spectrum.

use subband_aec::autodiff::{Tape, Tensor};
use subband_aec::losses::{final_loss, loss_asym, loss_echo, loss_echo_aware, loss_mask, LossConfig, TrainingTargets};

fn main() -> subband_aec::Result<()> {
    let cfg = LossConfig::default();
    let row = |v: &[f64]| Tensor::new(&[1, 1, v.len()], v.to_vec());
    let targets = TrainingTargets {
        s_re: row(&[0.5, -1.0, 2.0, 0.1])?,
        s_im: row(&[0.3, 0.2, -0.7, 0.0])?,
        z_re: row(&[1.0, 0.0, 0.4, 0.0])?,
        z_im: row(&[0.0, 0.5, 0.0, 0.2])?,
        near: vec![1.0],
        far: vec![1.0],
    };
    let mut tape = Tape::new();
    let est = (tape.constant(row(&[0.6, -0.8, 1.5, 0.3])?), tape.constant(row(&[0.2, 0.4, -0.5, 0.1])?));
    let s = (tape.constant(targets.s_re.clone()), tape.constant(targets.s_im.clone()));
    let z = (tape.constant(targets.z_re.clone()), tape.constant(targets.z_im.clone()));

    let mask = loss_mask(&mut tape, est, s, &cfg)?;
    let aware = loss_echo_aware(&mut tape, est, &targets, &cfg)?;
    let asym = loss_asym(&mut tape, est, s, &cfg)?;
    let echo = loss_echo(&mut tape, est, z)?;
    let v = |x| tape.value(x).item();
    println!("mask        {:.4}", v(mask));
    println!("echo-aware  {:.4}", v(aware));
    println!("asymmetric  {:.4}", v(asym));
    println!("echo        {:.4}", v(echo));
    println!("total       {:.4}", final_loss(v(aware), v(mask), 0.0, v(echo), v(asym)));
    Ok(())
}
