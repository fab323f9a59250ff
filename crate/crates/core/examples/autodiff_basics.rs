//! Fit a tiny gated convolution with the tape and Adam.

use subband_aec::autodiff::{Adam, ConvSpec, ModelParams, Tape, Tensor};

fn main() -> subband_aec::Result<()> {
    let x = Tensor::new(&[1, 1, 4, 6], (0..24).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let target = Tensor::new(&[1, 1, 4, 6], (0..24).map(|i| 0.5 * (i as f64 * 0.37).cos()).collect())?;

    let mut params = ModelParams::new();
    params.insert("w", Tensor::new(&[2, 1, 1, 3], vec![0.1, -0.2, 0.3, 0.05, 0.1, -0.1])?);
    params.insert("b", Tensor::new(&[2], vec![0.0, 0.0])?);
    let spec = ConvSpec::default().with_padding([0, 0, 1, 1]);
    let mut adam = Adam::new(0.05);

    for step in 0..=200 {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = tape.conv2d(xv, p.var("w"), Some(p.var("b")), spec)?;
        let halves = tape.split(y, 1, &[1, 1])?;
        let gate = tape.sigmoid(halves[1]);
        let out = tape.mul(halves[0], gate)?;
        let t = tape.constant(target.clone());
        let diff = tape.sub(out, t)?;
        let sq = tape.mul(diff, diff)?;
        let loss = tape.mean_all(sq);
        if step % 50 == 0 {
            println!("step {step:3}  loss {:.5}", tape.value(loss).item());
        }
        let mut grads = tape.backward(loss)?;
        let g = p.collect(&tape, &mut grads);
        adam.step(&mut params, &g)?;
    }
    Ok(())
}
