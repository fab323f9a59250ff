//! Shoebox room impulse responses by the image-source method.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Half-width of the windowed-sinc fractional delay kernel.
const SINC_HALF_WIDTH: usize = 16;

const HIGH_PASS_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Room extents in metres.
    pub dims: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
    /// Reverberation time in seconds; sets both the wall reflection
    /// coefficient and the response length.
    pub rt60: f64,
    pub max_order: usize,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rt60 > 0.0 && self.rt60.is_finite()) {
            return Err(Error::Config(format!("rt60 must be positive, got {}", self.rt60)));
        }
        for axis in 0..3 {
            let l = self.dims[axis];
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("room dimension {axis} must be positive, got {l}")));
            }
            for (what, p) in [("source", self.source), ("mic", self.mic)] {
                if !(p[axis] > 0.0 && p[axis] < l) {
                    return Err(Error::Config(format!("{what} {:?} is not inside room {:?}", p, self.dims)));
                }
            }
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Uniform wall absorption from Sabine's formula `RT60 = 0.161·V/(S·α)`,
    /// capped at full absorption.
    pub fn absorption(&self) -> f64 {
        (0.161 * self.volume() / (self.surface() * self.rt60)).min(1.0)
    }

    /// Pressure reflection coefficient `√(1 − α)` under Sabine absorption.
    pub fn reflection(&self) -> f64 {
        (1.0 - self.absorption()).sqrt()
    }

    pub fn direct_distance(&self) -> f64 {
        (0..3)
            .map(|a| (self.source[a] - self.mic[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Image positions along one axis: `(coordinate, wall reflections)` for
/// every image whose reflection count does not exceed `max_order`.
fn axis_images(src: f64, len: f64, max_order: usize) -> Vec<(f64, usize)> {
    let n_max = max_order as i64 / 2 + 1;
    let mut out = Vec::new();
    for n in -n_max..=n_max {
        for q in 0..2i64 {
            let pos = (1 - 2 * q) as f64 * src + 2.0 * n as f64 * len;
            let order = ((n - q).abs() + n.abs()) as usize;
            if order <= max_order {
                out.push((pos, order));
            }
        }
    }
    out
}

/// Adds a windowed-sinc impulse of height `amp` at fractional position `t`.
fn add_fractional(h: &mut [f64], t: f64, amp: f64) {
    let centre = t.round() as i64;
    let w = SINC_HALF_WIDTH as i64;
    for k in centre - w..=centre + w {
        if k < 0 || k as usize >= h.len() {
            continue;
        }
        let x = k as f64 - t;
        if x.abs() >= w as f64 + 1.0 {
            continue;
        }
        let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
        let win = 0.5 * (1.0 + (PI * x / (w as f64 + 1.0)).cos());
        h[k as usize] += amp * sinc * win;
    }
}

struct Image {
    /// Delay in samples.
    delay: f64,
    order: i32,
    inv_dist: f64,
}

fn images_within(room: &RoomSpec, reach: f64, fs: f64) -> Vec<Image> {
    let axes: Vec<Vec<(f64, usize)>> = (0..3)
        .map(|a| axis_images(room.source[a], room.dims[a], room.max_order))
        .collect();
    let mut out = Vec::new();
    for &(x, ox) in &axes[0] {
        let dx = x - room.mic[0];
        if dx.abs() > reach {
            continue;
        }
        for &(y, oy) in &axes[1] {
            let dy = y - room.mic[1];
            if ox + oy > room.max_order || dx.hypot(dy) > reach {
                continue;
            }
            for &(z, oz) in &axes[2] {
                let order = ox + oy + oz;
                if order > room.max_order {
                    continue;
                }
                let dz = z - room.mic[2];
                let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                if dist > reach {
                    continue;
                }
                out.push(Image {
                    delay: dist / SPEED_OF_SOUND * fs,
                    order: order as i32,
                    inv_dist: 1.0 / (4.0 * PI * dist.max(1e-3)),
                });
            }
        }
    }
    out
}

/// Reverberation time of a decay curve from a least-squares fit between −5
/// and −25 dB, extrapolated to −60 dB. `None` if the curve never spans that
/// range.
pub fn decay_time(edc_db: &[f64], fs: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = edc_db
        .iter()
        .enumerate()
        .filter(|(_, &d)| (-25.0..=-5.0).contains(&d))
        .map(|(i, &d)| (i as f64 / fs, d))
        .collect();
    if pts.len() < 2 || edc_db.last().is_none_or(|&d| d > -25.0) {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0 && sxy < 0.0).then(|| -60.0 * sxx / sxy)
}

/// Impulse response of length `⌈rt60·fs⌉`. Each image contributes
/// `β^order/(4π·dist)` at delay `dist/c·fs` samples, placed with a
/// windowed-sinc fractional delay. Reflections are high-passed at 50 Hz:
/// the image amplitudes are all positive, and without it their dense late
/// sum builds a low-frequency component that decays more slowly than the
/// reflection coefficient implies.
pub fn image_method_rir(room: &RoomSpec, fs: u32) -> Result<Vec<f64>> {
    room.validate()?;
    let fs = fs as f64;
    let len = (room.rt60 * fs).ceil() as usize;
    let reach = (len + SINC_HALF_WIDTH) as f64 / fs * SPEED_OF_SOUND;
    let images = images_within(room, reach, fs);
    let beta = room.reflection();
    let mut direct = vec![0.0; len];
    let mut reflected = vec![0.0; len];
    for im in &images {
        let amp = beta.powi(im.order) * im.inv_dist;
        if amp != 0.0 {
            let dst = if im.order == 0 { &mut direct } else { &mut reflected };
            add_fractional(dst, im.delay, amp);
        }
    }
    high_pass(&mut reflected, HIGH_PASS_HZ, fs);
    Ok(direct.iter().zip(&reflected).map(|(a, b)| a + b).collect())
}

/// Second-order Butterworth high-pass applied in place.
fn high_pass(x: &mut [f64], cutoff: f64, fs: f64) {
    let w0 = 2.0 * PI * cutoff / fs;
    let alpha = w0.sin() / 2f64.sqrt();
    let cw = w0.cos();
    let a0 = 1.0 + alpha;
    let b = [(1.0 + cw) / 2.0 / a0, -(1.0 + cw) / a0, (1.0 + cw) / 2.0 / a0];
    let a = [-2.0 * cw / a0, (1.0 - alpha) / a0];
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b[0] * *v + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Schroeder backward-integrated energy decay in dB, normalized to 0 dB at
/// the start.
pub fn energy_decay_db(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0).max(1e-300);
    edc.iter().map(|e| 10.0 * (e / total).max(1e-30).log10()).collect()
}
