//! Model-based rollouts under a policy network and their parameter gradients.
//!
//! The actor objective of one start state is
//! `J = Σ_{i=0}^{N} γ^i l(x_i, u_i) + γ_T V(x_{N+1})` with `u_i = π(x_i; θ)`.
//! Its gradient follows the tangent recursion
//! `φ_{i+1} = A_i φ_i + B_i ψ_i`, `ψ_i = (∂π/∂x) φ_i + ∂π/∂θ`, `φ_0 = 0`,
//! which is evaluated here in reverse (adjoint) order so that no `n×P`
//! matrix is ever formed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ConstraintEval, ModelError, SystemModel, UtilityEval};
use crate::netcore::{ForwardTrace, NetError, NetworkSpec, ParamVector};

/// Exponent applied to `γ` on the bootstrap value `V(x_{N+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalDiscount {
    /// `γ^N`, although the utility sum has `N + 1` terms.
    #[default]
    PowN,
    /// `γ^{N+1}`, the one-step-consistent exponent.
    PowNPlusOne,
}

impl TerminalDiscount {
    pub fn factor(self, gamma: f64, horizon: usize) -> f64 {
        match self {
            TerminalDiscount::PowN => gamma.powi(horizon as i32),
            TerminalDiscount::PowNPlusOne => gamma.powi(horizon as i32 + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discount {
    pub gamma: f64,
    pub terminal: TerminalDiscount,
}

impl Discount {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            terminal: TerminalDiscount::PowN,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("trajectory invalid at step {step}: {source}")]
    Model {
        step: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("network maps {net_in} -> {net_out}, model needs {model_in} -> {model_out}")]
    Shape {
        net_in: usize,
        net_out: usize,
        model_in: usize,
        model_out: usize,
    },
    #[error("constraint record (step {step}, id {id}) is outside the trajectory")]
    Record { step: usize, id: usize },
}

/// Per-step data retained for differentiation.
#[derive(Debug, Clone)]
pub struct StepData {
    /// ∂f/∂x at `(x_i, u_i)`.
    pub dx: DMatrix<f64>,
    /// ∂f/∂u at `(x_i, u_i)`.
    pub du: DMatrix<f64>,
    pub utility: UtilityEval,
    pub policy_trace: ForwardTrace,
}

/// Closed-loop trajectory `x_0..x_{N+1}`, `u_0..u_N`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub steps: Vec<StepData>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len() - 1
    }

    pub fn utilities(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.utility.value)
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least two states")
    }
}

/// A constraint evaluated at `x_{step+1}`, reached under `u_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRecord {
    pub step: usize,
    pub id: usize,
    pub eval: ConstraintEval,
}

/// A rollout with its return target, actor gradient and constraint values.
#[derive(Debug, Clone)]
pub struct RolloutBundle {
    pub trajectory: Trajectory,
    pub target: f64,
    pub actor_gradient: ParamVector,
    pub constraints: Vec<ConstraintRecord>,
}

fn check_shapes(model: &dyn SystemModel, net: &NetworkSpec, out_dim: usize) -> Result<(), RolloutError> {
    if net.input_dim != model.state_dim() || net.output_dim != out_dim {
        return Err(RolloutError::Shape {
            net_in: net.input_dim,
            net_out: net.output_dim,
            model_in: model.state_dim(),
            model_out: out_dim,
        });
    }
    Ok(())
}

/// Rolls out `horizon + 1` steps of `u = π(x; θ)` from `x0`.
pub fn rollout(
    model: &dyn SystemModel,
    policy: &NetworkSpec,
    theta: &ParamVector,
    x0: &[f64],
    horizon: usize,
) -> Result<Trajectory, RolloutError> {
    check_shapes(model, policy, model.control_dim())?;
    model.check_state(x0).map_err(|source| RolloutError::Model { step: 0, source })?;
    let mut states = Vec::with_capacity(horizon + 2);
    let mut controls = Vec::with_capacity(horizon + 1);
    let mut steps = Vec::with_capacity(horizon + 1);
    states.push(x0.to_vec());
    for i in 0..=horizon {
        let x = &states[i];
        let policy_trace = policy.trace(theta, x)?;
        let u = policy_trace.output().to_vec();
        let lin = model
            .linearize(x, &u)
            .and_then(|lin| model.check_state(&lin.next).map(|_| lin))
            .map_err(|source| RolloutError::Model { step: i, source })?;
        let utility = model.utility(x, &u);
        steps.push(StepData {
            dx: lin.dx,
            du: lin.du,
            utility,
            policy_trace,
        });
        controls.push(u);
        states.push(lin.next);
    }
    Ok(Trajectory { states, controls, steps })
}

/// `G = Σ γ^i l_i + γ_T V(x_{N+1}; w)`.
pub fn return_target(
    traj: &Trajectory,
    value: &NetworkSpec,
    w: &ParamVector,
    discount: Discount,
) -> Result<f64, RolloutError> {
    let mut g = 0.0;
    let mut weight = 1.0;
    for l in traj.utilities() {
        g += weight * l;
        weight *= discount.gamma;
    }
    let v = value.forward(w, traj.terminal_state())?[0];
    Ok(g + discount.terminal.factor(discount.gamma, traj.horizon()) * v)
}

fn mat_t_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| m.column(j).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Adjoint sweep from step `last` down to 0.
///
/// `seed` is the cotangent of `x_{last+1}`; `local(j)` yields the direct
/// cotangents of `(x_j, u_j)`. Returns the accumulated parameter gradient.
fn reverse_sweep<F>(traj: &Trajectory, policy: &NetworkSpec, theta: &ParamVector, last: usize, seed: Vec<f64>, mut local: F) -> ParamVector
where
    F: FnMut(usize) -> Option<(Vec<f64>, Vec<f64>)>,
{
    let mut grad = theta.zeros_like();
    let mut adj_x = seed;
    for j in (0..=last).rev() {
        let step = &traj.steps[j];
        let mut adj_u = mat_t_vec(&step.du, &adj_x);
        let mut next_adj = mat_t_vec(&step.dx, &adj_x);
        if let Some((lx, lu)) = local(j) {
            for (a, b) in adj_u.iter_mut().zip(&lu) {
                *a += b;
            }
            for (a, b) in next_adj.iter_mut().zip(&lx) {
                *a += b;
            }
        }
        let through_policy = policy.backprop(theta, &step.policy_trace, &adj_u, Some(grad.values_mut()));
        if j == 0 {
            break;
        }
        for (a, b) in next_adj.iter_mut().zip(&through_policy) {
            *a += b;
        }
        adj_x = next_adj;
    }
    grad
}

/// `dJ/dθ` of the discounted N-step objective with bootstrap value.
pub fn actor_gradient(
    traj: &Trajectory,
    policy: &NetworkSpec,
    theta: &ParamVector,
    value: &NetworkSpec,
    w: &ParamVector,
    discount: Discount,
) -> Result<ParamVector, RolloutError> {
    let horizon = traj.horizon();
    let terminal = discount.terminal.factor(discount.gamma, horizon);
    let vtrace = value.trace(w, traj.terminal_state())?;
    let seed = value.backprop(w, &vtrace, &[terminal], None);
    let gamma = discount.gamma;
    Ok(reverse_sweep(traj, policy, theta, horizon, seed, |j| {
        let weight = gamma.powi(j as i32);
        let l = &traj.steps[j].utility;
        Some((
            l.dx.iter().map(|v| v * weight).collect(),
            l.du.iter().map(|v| v * weight).collect(),
        ))
    }))
}

/// Every constraint at every step, values only.
pub fn constraint_values(model: &dyn SystemModel, traj: &Trajectory) -> Result<Vec<ConstraintRecord>, RolloutError> {
    let mut out = Vec::with_capacity(traj.controls.len() * model.constraint_count());
    for (i, u) in traj.controls.iter().enumerate() {
        let evals = model
            .constraints(&traj.states[i + 1], u)
            .map_err(|source| RolloutError::Model { step: i, source })?;
        out.extend(evals.into_iter().enumerate().map(|(id, eval)| ConstraintRecord { step: i, id, eval }));
    }
    Ok(out)
}

/// `dJ_C/dθ = (∂J_C/∂x) φ_{i+1} + (∂J_C/∂u) ψ_i` for one record.
pub fn constraint_gradient(
    traj: &Trajectory,
    policy: &NetworkSpec,
    theta: &ParamVector,
    record: &ConstraintRecord,
) -> Result<ParamVector, RolloutError> {
    if record.step >= traj.controls.len() {
        return Err(RolloutError::Record {
            step: record.step,
            id: record.id,
        });
    }
    let du = record.eval.du.clone();
    let last = record.step;
    Ok(reverse_sweep(traj, policy, theta, last, record.eval.dx.clone(), |j| {
        (j == last).then(|| (Vec::new(), du.clone()))
    }))
}

/// All constraint records paired with their parameter gradients.
pub fn constraint_gradients(
    model: &dyn SystemModel,
    traj: &Trajectory,
    policy: &NetworkSpec,
    theta: &ParamVector,
) -> Result<Vec<(ConstraintRecord, ParamVector)>, RolloutError> {
    constraint_values(model, traj)?
        .into_iter()
        .map(|rec| {
            let g = constraint_gradient(traj, policy, theta, &rec)?;
            Ok((rec, g))
        })
        .collect()
}

/// Rollout, return target, actor gradient and constraint values for one start state.
pub fn rollout_bundle(
    model: &dyn SystemModel,
    policy: &NetworkSpec,
    theta: &ParamVector,
    value: &NetworkSpec,
    w: &ParamVector,
    x0: &[f64],
    horizon: usize,
    discount: Discount,
) -> Result<RolloutBundle, RolloutError> {
    check_shapes(model, value, 1)?;
    let trajectory = rollout(model, policy, theta, x0, horizon)?;
    let target = return_target(&trajectory, value, w, discount)?;
    let actor_gradient = actor_gradient(&trajectory, policy, theta, value, w, discount)?;
    let constraints = constraint_values(model, &trajectory)?;
    Ok(RolloutBundle {
        trajectory,
        target,
        actor_gradient,
        constraints,
    })
}
