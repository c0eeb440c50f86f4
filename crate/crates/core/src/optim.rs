//! Adagrad: per-coordinate step `lr * g / (sqrt(acc) + eps)` after
//! accumulating `acc += g^2`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub learning_rate: f64,
    pub epsilon: f64,
    accumulators: Vec<Vec<f64>>,
}

impl AdagradState {
    pub fn new(learning_rate: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            epsilon,
            accumulators: Vec::new(),
        }
    }

    /// Accumulator buffers, one per parameter slot seen so far.
    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    /// Updates one parameter buffer in place. `slot` identifies the
    /// accumulator; buffers are created as zeros on first use.
    pub fn step_slice(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::len(params.len(), grads.len()));
        }
        if self.accumulators.len() <= slot {
            self.accumulators.resize_with(slot + 1, Vec::new);
        }
        let acc = &mut self.accumulators[slot];
        if acc.is_empty() {
            *acc = vec![0.0; params.len()];
        } else if acc.len() != params.len() {
            return Err(Error::len(acc.len(), params.len()));
        }
        for ((p, &g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
            *a += g * g;
            *p -= self.learning_rate * g / (libm::sqrt(*a) + self.epsilon);
        }
        Ok(())
    }

    /// Applies one step to every trainable parameter of `net` using the
    /// gradients currently stored in its registry.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        for id in 0..net.params().len() {
            let param = net.param_mut(id);
            if !param.trainable {
                continue;
            }
            let grad = param.tensor.grad().map(<[f64]>::to_vec);
            if let Some(grad) = grad {
                self.step_slice(id, param.tensor.values_mut(), &grad)?;
            }
        }
        Ok(())
    }
}
