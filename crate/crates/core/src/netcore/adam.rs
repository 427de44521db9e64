use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use super::NetError;

/// Adam optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam step, in place.
    pub fn update(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<(), NetError> {
        params.check_layout(grad)?;
        if self.first_moment.len() != params.len() || self.second_moment.len() != params.len() {
            return Err(NetError::LayoutMismatch {
                expected: params.len(),
                got: self.first_moment.len(),
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form: returns the advanced state and the updated parameters.
pub fn adam_update(state: &AdamState, params: &ParamVector, grad: &ParamVector) -> Result<(AdamState, ParamVector), NetError> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.update(&mut params, grad)?;
    Ok((state, params))
}
