//! Value-network regression onto fixed N-step return targets.

use crate::netcore::{AdamState, NetError, NetworkSpec, ParamVector};

#[derive(Debug, thiserror::Error)]
pub enum CriticError {
    #[error("critic batch is empty")]
    EmptyBatch,
    #[error("{states} states but {targets} targets")]
    Length { states: usize, targets: usize },
    #[error("target {index} is not finite")]
    NonFiniteTarget { index: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// States with their return targets, held constant during the update.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticBatch {
    pub states: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl CriticBatch {
    pub fn new(states: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, CriticError> {
        if states.len() != targets.len() {
            return Err(CriticError::Length {
                states: states.len(),
                targets: targets.len(),
            });
        }
        if states.is_empty() {
            return Err(CriticError::EmptyBatch);
        }
        if let Some(index) = targets.iter().position(|g| !g.is_finite()) {
            return Err(CriticError::NonFiniteTarget { index });
        }
        Ok(Self { states, targets })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Mean of `½ (G − V(x; w))²`.
pub fn critic_loss(batch: &CriticBatch, value: &NetworkSpec, w: &ParamVector) -> Result<f64, CriticError> {
    if batch.is_empty() {
        return Err(CriticError::EmptyBatch);
    }
    let mut total = 0.0;
    for (x, g) in batch.states.iter().zip(&batch.targets) {
        let e = g - value.forward(w, x)?[0];
        total += 0.5 * e * e;
    }
    Ok(total / batch.len() as f64)
}

/// Semi-gradient of [`critic_loss`]: mean of `−(G − V) ∂V/∂w`.
pub fn critic_gradient(batch: &CriticBatch, value: &NetworkSpec, w: &ParamVector) -> Result<ParamVector, CriticError> {
    if batch.is_empty() {
        return Err(CriticError::EmptyBatch);
    }
    let mut grad = w.zeros_like();
    let inv = 1.0 / batch.len() as f64;
    for (x, g) in batch.states.iter().zip(&batch.targets) {
        let trace = value.trace(w, x)?;
        let up = -(g - trace.output()[0]) * inv;
        value.backprop(w, &trace, &[up], Some(grad.values_mut()));
    }
    Ok(grad)
}

/// `epochs` Adam steps on the fixed batch; returns the loss before the first step.
pub fn critic_update(
    batch: &CriticBatch,
    value: &NetworkSpec,
    w: &mut ParamVector,
    adam: &mut AdamState,
    epochs: usize,
) -> Result<f64, CriticError> {
    let before = critic_loss(batch, value, w)?;
    for _ in 0..epochs {
        let grad = critic_gradient(batch, value, w)?;
        adam.update(w, &grad)?;
    }
    Ok(before)
}
