use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{write_trajectory_csv, SystemModel};
use crate::netcore::{NetworkSpec, ParamVector};

use super::TrainerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    /// Control step whose transition left the model domain.
    pub step: usize,
    pub message: String,
}

/// Closed-loop simulation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Undiscounted utility sum over the completed steps.
    pub cost: f64,
    /// Per-constraint maximum of `value − bound`; `−∞` when no step completed.
    pub max_excess: Vec<f64>,
    pub steps_completed: usize,
    pub failure: Option<EvalFailure>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

impl Evaluation {
    /// Whether any constraint was exceeded.
    pub fn violated(&self) -> bool {
        self.max_excess.iter().any(|e| *e > 0.0)
    }

    pub fn worst_excess(&self) -> f64 {
        self.max_excess.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, writer: W, model: &dyn SystemModel, dt: f64) -> Result<(), TrainerError> {
        write_trajectory_csv(writer, model, dt, &self.states, &self.controls)?;
        Ok(())
    }
}

/// Runs `u = π(x; θ)` for `steps` control steps from `x0`.
///
/// A transition leaving the model domain ends the run early and is reported
/// in `failure`; the cost covers the steps before it.
pub fn evaluate(
    model: &dyn SystemModel,
    policy: &NetworkSpec,
    theta: &ParamVector,
    x0: &[f64],
    steps: usize,
) -> Result<Evaluation, TrainerError> {
    model.check_state(x0)?;
    let mut x = x0.to_vec();
    let mut eval = Evaluation {
        cost: 0.0,
        max_excess: vec![f64::NEG_INFINITY; model.constraint_count()],
        steps_completed: 0,
        failure: None,
        states: vec![x.clone()],
        controls: Vec::with_capacity(steps),
    };
    for i in 0..steps {
        let u = policy.forward(theta, &x)?;
        let next = model.step(&x, &u).and_then(|n| model.check_state(&n).map(|_| n));
        let next = match next {
            Ok(n) => n,
            Err(e) => {
                eval.failure = Some(EvalFailure {
                    step: i,
                    message: e.to_string(),
                });
                eval.controls.push(u);
                break;
            }
        };
        let constraints = model.constraints(&next, &u)?;
        eval.cost += model.utility(&x, &u).value;
        for (m, c) in eval.max_excess.iter_mut().zip(&constraints) {
            *m = m.max(c.excess());
        }
        eval.controls.push(u);
        eval.states.push(next.clone());
        eval.steps_completed += 1;
        x = next;
    }
    Ok(eval)
}
