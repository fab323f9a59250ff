//! Mixing of near-end speech, echo and noise at prescribed ratios, and
//! energy-threshold activity labels.

use crate::error::{Error, Result};
use crate::signal::convolve;
use serde::{Deserialize, Serialize};

/// Activity threshold below the loudest frame, in dB.
pub const VAD_RANGE_DB: f64 = 40.0;
/// Absolute activity floor in dBFS.
pub const VAD_FLOOR_DBFS: f64 = -60.0;

/// Label frame and hop at 48 kHz, aligned with the 20 ms / 10 ms sub-band
/// STFT frames.
pub const LABEL_FRAME: usize = 960;
pub const LABEL_HOP: usize = 480;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    FarSingleTalk,
    NearSingleTalk,
    DoubleTalk,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::FarSingleTalk, Scenario::NearSingleTalk, Scenario::DoubleTalk];

    pub fn has_near(self) -> bool {
        self != Scenario::FarSingleTalk
    }

    pub fn has_far(self) -> bool {
        self != Scenario::NearSingleTalk
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::FarSingleTalk => "far-single-talk",
            Scenario::NearSingleTalk => "near-single-talk",
            Scenario::DoubleTalk => "double-talk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub ser_db: f64,
    pub snr_near_db: f64,
    pub snr_far_db: f64,
    /// Extra far-end to echo delay in samples, on top of the acoustic path.
    pub delay: usize,
    pub scenario: Scenario,
    pub seed: u64,
}

/// Signals of one synthesized clip, all the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    /// Microphone `d = s + z + v`.
    pub mic: Vec<f64>,
    /// Far-end reference as seen by the canceller (speech plus far-end noise).
    pub far: Vec<f64>,
    /// Near-end speech target `s`.
    pub near: Vec<f64>,
    /// Echo `z`.
    pub echo: Vec<f64>,
    /// Near-end noise `v`.
    pub noise: Vec<f64>,
    pub near_labels: Vec<bool>,
    pub far_labels: Vec<bool>,
}

/// Per-frame mean power over frames of `frame` samples every `hop`.
pub fn frame_powers(w: &[f64], frame: usize, hop: usize) -> Vec<f64> {
    if frame == 0 || hop == 0 || w.len() < frame {
        return Vec::new();
    }
    (0..(w.len() - frame) / hop + 1)
        .map(|t| w[t * hop..t * hop + frame].iter().map(|v| v * v).sum::<f64>() / frame as f64)
        .collect()
}

/// A frame is active iff its RMS level exceeds both the loudest frame's
/// level minus 40 dB and −60 dBFS (strict inequalities).
pub fn vad_labels(w: &[f64], frame: usize, hop: usize) -> Vec<bool> {
    let p = frame_powers(w, frame, hop);
    let peak = p.iter().copied().fold(0.0, f64::max);
    let rel = peak * 10f64.powf(-VAD_RANGE_DB / 10.0);
    let abs = 10f64.powf(VAD_FLOOR_DBFS / 10.0);
    p.iter().map(|&v| v > rel && v > abs).collect()
}

/// Mean power over the frames selected by `mask`.
pub fn masked_power(w: &[f64], frame: usize, hop: usize, mask: &[bool]) -> Option<f64> {
    let p = frame_powers(w, frame, hop);
    let sel: Vec<f64> = p.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}

/// Gain applied to the interferer so that `10·log10(P_ref / (g²·P_int))`
/// equals `ratio_db`.
pub fn ratio_gain(p_ref: f64, p_int: f64, ratio_db: f64) -> f64 {
    (p_ref / (p_int * 10f64.powf(ratio_db / 10.0))).sqrt()
}

/// How the measurement frames of a power ratio are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioWindow {
    /// Frames where both signals are active, or each signal's own active
    /// frames when they never overlap. Used for the echo ratio.
    BothActive,
    /// Frames where the reference is active. Used for noise ratios, since
    /// stationary noise has no activity of its own.
    ReferenceActive,
}

/// Powers of `reference` and `interferer` over the frames selected by
/// `window`. A silent reference is an error.
pub fn paired_powers(reference: &[f64], interferer: &[f64], window: RatioWindow) -> Result<(f64, f64)> {
    let (fr, hp) = (LABEL_FRAME, LABEL_HOP);
    let lr = vad_labels(reference, fr, hp);
    if !lr.iter().any(|&b| b) {
        return Err(Error::Config("reference signal is silent; a finite ratio cannot be met".into()));
    }
    let pr = |mask: &[bool]| masked_power(reference, fr, hp, mask).expect("non-empty");
    let pi = |mask: &[bool]| masked_power(interferer, fr, hp, mask).expect("non-empty");
    if window == RatioWindow::ReferenceActive {
        return Ok((pr(&lr), pi(&lr)));
    }
    let li = vad_labels(interferer, fr, hp);
    if !li.iter().any(|&b| b) {
        return Err(Error::Config("interfering signal is silent; a finite ratio cannot be met".into()));
    }
    let both: Vec<bool> = lr.iter().zip(&li).map(|(a, b)| *a && *b).collect();
    if both.iter().any(|&b| b) {
        Ok((pr(&both), pi(&both)))
    } else {
        Ok((pr(&lr), pi(&li)))
    }
}

/// Realized ratio in dB, measured like [`paired_powers`].
pub fn measured_ratio_db(reference: &[f64], interferer: &[f64], window: RatioWindow) -> Result<f64> {
    let (pr, pi) = paired_powers(reference, interferer, window)?;
    Ok(10.0 * (pr / pi).log10())
}

/// Scales `interferer` to meet `ratio_db` against `reference`. The activity
/// floor depends on absolute level, so the measurement is repeated on the
/// scaled signal until it settles. An all-zero interferer is returned as is.
fn scale_to_ratio(reference: &[f64], interferer: &[f64], ratio_db: f64, window: RatioWindow) -> Result<Vec<f64>> {
    if interferer.iter().all(|&v| v == 0.0) {
        return Ok(interferer.to_vec());
    }
    let mut gain = 1.0;
    for _ in 0..8 {
        let scaled: Vec<f64> = interferer.iter().map(|v| v * gain).collect();
        let (pr, pi) = paired_powers(reference, &scaled, window)?;
        if pi == 0.0 {
            break;
        }
        let step = ratio_gain(pr, pi, ratio_db);
        gain *= step;
        if (step - 1.0).abs() < 1e-9 {
            break;
        }
    }
    Ok(interferer.iter().map(|v| v * gain).collect())
}

fn delayed(x: &[f64], delay: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if delay < x.len() {
        out[delay..].copy_from_slice(&x[..x.len() - delay]);
    }
    out
}

/// Builds one clip from clean near-end speech `s`, far-end speech `x`,
/// near-end noise `v`, far-end noise `u`, and echo path `h`.
///
/// The far-end reference is `x + u` with `u` at `snr_far_db`. The echo is
/// that reference delayed by `spec.delay` and convolved with `h`, scaled to
/// `ser_db` against `s`. The noise is scaled to `snr_near_db` against `s`
/// (against the echo in far-end single talk). Far-end single talk zeroes
/// `s`; near-end single talk zeroes the far-end signal and hence the echo.
pub fn mix(s: &[f64], x: &[f64], v: &[f64], u: &[f64], h: &[f64], spec: &MixSpec) -> Result<Mixture> {
    let n = s.len();
    if x.len() != n || v.len() != n || u.len() != n {
        return Err(Error::Shape(format!(
            "mix inputs must share a length: s {n}, x {}, v {}, u {}",
            x.len(),
            v.len(),
            u.len()
        )));
    }
    if h.is_empty() {
        return Err(Error::Config("echo path is empty".into()));
    }
    let near = if spec.scenario.has_near() { s.to_vec() } else { vec![0.0; n] };
    let (far, far_clean) = if spec.scenario.has_far() {
        let u = scale_to_ratio(x, u, spec.snr_far_db, RatioWindow::ReferenceActive)?;
        (x.iter().zip(&u).map(|(a, b)| a + b).collect::<Vec<_>>(), x.to_vec())
    } else {
        (vec![0.0; n], vec![0.0; n])
    };
    let echo = if spec.scenario.has_far() {
        let mut z = convolve(&delayed(&far, spec.delay), h);
        z.truncate(n);
        if spec.scenario.has_near() {
            scale_to_ratio(&near, &z, spec.ser_db, RatioWindow::BothActive)?
        } else {
            z
        }
    } else {
        vec![0.0; n]
    };
    let noise_ref = if spec.scenario.has_near() { &near } else { &echo };
    let noise = scale_to_ratio(noise_ref, v, spec.snr_near_db, RatioWindow::ReferenceActive)?;
    let mic = (0..n).map(|i| near[i] + echo[i] + noise[i]).collect();
    Ok(Mixture {
        mic,
        near_labels: vad_labels(&near, LABEL_FRAME, LABEL_HOP),
        far_labels: vad_labels(&far_clean, LABEL_FRAME, LABEL_HOP),
        far,
        near,
        echo,
        noise,
    })
}
