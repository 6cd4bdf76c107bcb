use serde::{Deserialize, Serialize};

use super::{Grads, VaeModel};
use crate::error::{Error, Result};

/// Velocity per parameter tensor, created zeroed on the first step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    /// `v ← β v + g; θ ← θ − α v` on each named tensor. Nothing is modified
    /// when any gradient is non-finite.
    pub fn apply(
        &mut self,
        params: Vec<(String, &mut [f64])>,
        grads: Vec<(String, &[f64])>,
        lr: f64,
        momentum: f64,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors but {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        for ((pn, p), (gn, g)) in params.iter().zip(&grads) {
            if p.len() != g.len() {
                return Err(Error::Shape(format!("{pn}: {} values, gradient {gn} has {}", p.len(), g.len())));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in {gn} at index {i}")));
            }
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        }
        for (((_, p), (_, g)), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((theta, &grad), vel) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vel = momentum * *vel + grad;
                *theta -= lr * *vel;
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// One SGD-with-momentum update of every trainable tensor of `model`.
pub fn sgd_momentum_step(
    model: &mut VaeModel,
    grads: &Grads,
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    state.apply(model.params_mut(), grads.tensors(), lr, momentum)
}
