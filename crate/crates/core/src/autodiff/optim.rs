//! Adam with bias correction.

use super::{ModelParams, Scalar};
use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Any non-finite gradient aborts the whole step
    /// before a parameter changes.
    pub fn step<T: Scalar>(&mut self, params: &mut ModelParams<T>, grads: &BTreeMap<String, Vec<T>>) -> Result<()> {
        for (name, g) in grads {
            let Some(p) = params.get(name) else {
                return Err(Error::Config(format!("gradient for unknown parameter {name}")));
            };
            if p.numel() != g.len() {
                return Err(Error::Shape(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    g.len(),
                    p.numel()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.as_f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *w = T::lit(w.as_f64() - self.lr * mh / (vh.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}
