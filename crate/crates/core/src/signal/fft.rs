//! Thin FFT layer over `rustfft`.
//!
//! Convention: the forward transform is unscaled, `X[k] = Σ x[n]·e^{-2πikn/N}`,
//! and the inverse carries the full `1/N` factor, so `ifft(fft(x)) = x`.
//! Under this convention an impulse maps to a flat spectrum of ones and a
//! constant vector of ones maps to `[N, 0, …, 0]`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// A planned transform pair for one length. Cheap to clone.
#[derive(Clone)]
pub struct FftPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("len", &self.len).finish()
    }
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("fft length must be non-zero".into()));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unscaled forward transform in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.forward.process(buf);
    }

    /// Inverse transform in place, scaled by `1/N`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Forward transform of a real sequence, zero-padded to the plan length.
    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward(&mut buf);
        buf
    }
}

pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.forward(&mut buf);
    Ok(buf)
}

pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut buf = x.to_vec();
    plan.inverse(&mut buf);
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn impulse_is_flat() {
        let out = fft(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        for v in out {
            assert_eq!(v, c(1.0));
        }
    }

    #[test]
    fn dc_vector() {
        let out = fft(&[c(1.0); 4]).unwrap();
        assert_eq!(out[0], c(4.0));
        for v in &out[1..] {
            assert!(v.norm() < 1e-15);
        }
    }

    #[test]
    fn matches_naive_dft_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Complex64> = (0..256)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let fast = fft(&x).unwrap();
        let slow = naive_dft(&x);
        let max_err = fast
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-9, "max err {max_err}");

        let back = ifft(&fast).unwrap();
        let norm: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let err: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm < 1e-10);

        // Parseval under the unscaled-forward convention: Σ|x|² = Σ|X|²/N.
        let et: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let ef: f64 = fast.iter().map(|v| v.norm_sqr()).sum::<f64>() / 256.0;
        assert!(((et - ef) / et).abs() < 1e-9);
    }

    #[test]
    fn zero_length_rejected() {
        assert!(fft(&[]).is_err());
    }
}
