//! Long short-term memory cell built from tape primitives, so gradients come
//! for free. Gate order along the `4H` axis is input, forget, cell, output.

use super::{Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Handles to the parameters of one LSTM layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[4H, I]`.
    pub w_ih: Var,
    /// `[4H, H]`.
    pub w_hh: Var,
    /// `[4H]`.
    pub bias: Var,
}

/// Hidden and cell state, each `[N, H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmWeights {
    pub fn hidden<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.w_hh)[1]
    }
}

impl<T: Scalar> Tape<T> {
    /// One cell update from precomputed input projections `xw = x·W_ihᵀ + b`
    /// (`[N, 4H]`).
    pub fn lstm_cell(&mut self, xw: Var, state: LstmState, weights: &LstmWeights) -> Result<LstmState> {
        let hidden = weights.hidden(self);
        let hw = self.linear(state.h, weights.w_hh, None)?;
        let gates = self.add(xw, hw)?;
        let parts = self.split(gates, 1, &[hidden; 4])?;
        let i = self.sigmoid(parts[0]);
        let f = self.sigmoid(parts[1]);
        let g = self.tanh(parts[2]);
        let o = self.sigmoid(parts[3]);
        let keep = self.mul(f, state.c)?;
        let write = self.mul(i, g)?;
        let c = self.add(keep, write)?;
        let tc = self.tanh(c);
        let h = self.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Single step from raw input `x: [N, I]`.
    pub fn lstm_step(&mut self, x: Var, state: LstmState, weights: &LstmWeights) -> Result<LstmState> {
        let xw = self.linear(x, weights.w_ih, Some(weights.bias))?;
        self.lstm_cell(xw, state, weights)
    }

    /// Zero initial state for `n` sequences.
    pub fn lstm_zero_state(&mut self, n: usize, weights: &LstmWeights) -> LstmState {
        let hidden = weights.hidden(self);
        let h = self.constant(super::Tensor::zeros(&[n, hidden]));
        let c = self.constant(super::Tensor::zeros(&[n, hidden]));
        LstmState { h, c }
    }

    /// Runs over `x: [N, L, I]`, returning outputs `[N, L, H]` and the final
    /// state.
    pub fn lstm_seq(
        &mut self,
        x: Var,
        weights: &LstmWeights,
        init: Option<LstmState>,
    ) -> Result<(Var, LstmState)> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::Shape(format!("lstm input must be [N, L, I], got {shape:?}")));
        }
        let (n, len) = (shape[0], shape[1]);
        let hidden = weights.hidden(self);
        let mut state = match init {
            Some(s) => s,
            None => self.lstm_zero_state(n, weights),
        };
        let xw = self.linear(x, weights.w_ih, Some(weights.bias))?;
        let mut outs = Vec::with_capacity(len);
        for t in 0..len {
            let step = self.slice(xw, 1, t, 1)?;
            let step = self.reshape(step, &[n, 4 * hidden])?;
            state = self.lstm_cell(step, state, weights)?;
            outs.push(self.reshape(state.h, &[n, 1, hidden])?);
        }
        let y = self.concat(&outs, 1)?;
        Ok((y, state))
    }
}
