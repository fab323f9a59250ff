use super::{NetState, Stfgcrn};
use crate::autodiff::{Scalar, Tensor};
use crate::error::Result;

/// Frame-synchronous wrapper: feeds any number of new frames at a time and
/// keeps the causal context between calls. Splitting the input into chunks
/// gives the same masks as one offline pass over the whole sequence.
#[derive(Debug, Clone)]
pub struct StreamingPostFilter<T: Scalar> {
    net: Stfgcrn<T>,
    state: NetState<T>,
}

impl<T: Scalar> StreamingPostFilter<T> {
    pub fn new(net: Stfgcrn<T>) -> Self {
        Self {
            net,
            state: NetState::new(),
        }
    }

    pub fn network(&self) -> &Stfgcrn<T> {
        &self.net
    }

    /// `frames: [B, 6, t, F]` → mask `[B, 2, t, F]`.
    pub fn push(&mut self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.infer_mask(frames, &mut self.state)
    }

    pub fn reset(&mut self) {
        self.state.reset();
    }
}
