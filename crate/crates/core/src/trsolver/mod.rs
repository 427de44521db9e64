//! Trust-region policy steps under linearized state constraints.
//!
//! The step problem is `min gᵀΔθ` subject to `½ΔθᵀHΔθ ≤ δ` and
//! `z + CᵀΔθ ≤ 0`, with unit-norm `g` and columns of `C`. It is solved
//! through its `M + 1` variable dual. When the linearized constraints need
//! a radius of at least `δ_b`, a penalty-weighted recovery step is taken.

mod dual;
mod metric;
mod step;

pub use dual::{
    assemble_dual_coefficients, solve_feasibility_dual, solve_main_dual, DualCoefficients, DualSettings,
    FeasibilitySolution, MainDualSolution,
};
pub use metric::{cg_solve, CgSettings, DenseMetric, GaussNewtonMetric, JacobianMetric, MetricOperator, Solve};
pub use step::{
    constrained_step, fixed_penalty_step, normalize, penalty_recovery_step, policy_step, recovery_weights,
    unconstrained_step, Branch, LinearizedStep, Normalized, RawConstraint, RecoveryStep, StepDiagnostics,
    StepOutcome, EPS_NORM,
};

use crate::netcore::NetError;

#[derive(Debug, thiserror::Error)]
pub enum TrError {
    #[error("objective gradient norm {norm:e} is below the degeneracy threshold")]
    DegenerateObjective { norm: f64 },
    #[error("penalty direction collapsed (mu_p = {mu_p:e})")]
    DegenerateRecovery { mu_p: f64 },
    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {residual:e}")]
    CgNotConverged { iterations: usize, residual: f64 },
    #[error("metric is not positive definite (curvature {curvature:e})")]
    NotPositiveDefinite { curvature: f64 },
    #[error("dual solver stopped after {iterations} iterations with projected-gradient norm {residual:e}")]
    DualNotConverged { iterations: usize, residual: f64 },
    #[error("linearized constraints are infeasible at radius {delta:e}")]
    Infeasible { delta: f64 },
    /// `g + Cν*` cancels in the metric: the linearized constraints alone bound the objective,
    /// so λ* = 0 and the step `−H⁻¹(g + Cν*)/λ*` is undefined.
    #[error("linearized constraints bound the objective inside the trust region (|g + Cν|² = {cancelled:e}); λ* = 0")]
    TrustRegionInactive { cancelled: f64 },
    #[error("invalid trust-region radius {delta:e}")]
    InvalidRadius { delta: f64 },
    #[error("penalty weight eta = {eta} outside [0, 1]")]
    InvalidEta { eta: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("metric requires at least one state")]
    EmptyStateSet,
    #[error(transparent)]
    Net(#[from] NetError),
}
