//! Build the post-filter network and run one forward pass on random features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use subband_aec::autodiff::{Tape, Tensor};
use subband_aec::stfgcrn::{Heads, NetState, NetworkConfig, Stfgcrn};

fn main() -> subband_aec::Result<()> {
    let full = Stfgcrn::<f32>::new(NetworkConfig::default(), 0)?;
    println!("default network: {} parameters", full.param_count());

    let cfg = NetworkConfig {
        channels: 8,
        fd_layers: 3,
        tfcm_layers: 2,
        vad_channels: 4,
        ..NetworkConfig::default()
    };
    let net = Stfgcrn::<f32>::new(cfg, 0)?;
    println!("small network: {} parameters", net.param_count());

    let (batch, frames) = (2, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = batch * cfg.input_channels * frames * cfg.freq_bins;
    let data: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = Tensor::new(&[batch, cfg.input_channels, frames, cfg.freq_bins], data)?;

    let mut tape = Tape::new();
    let params = net.params.bind_frozen(&mut tape);
    let xv = tape.constant(x);
    let out = net.forward(&mut tape, &params, xv, &mut NetState::new(), Heads::ALL)?;
    println!("mask {:?}", tape.shape(out.mask));
    if let Some((re, _)) = out.echo {
        println!("echo estimate {:?}", tape.shape(re));
    }
    if let (Some(pn), Some(pf)) = (out.p_near, out.p_far) {
        println!("near/far activity {:?} {:?}", tape.shape(pn), tape.shape(pf));
    }
    Ok(())
}
