use serde::{Deserialize, Serialize};

use super::dual::{assemble_dual_coefficients, solve_feasibility_dual, solve_main_dual, DualCoefficients, DualSettings};
use super::metric::{dot, MetricOperator};
use super::TrError;

/// Gradients shorter than this are treated as zero.
pub const EPS_NORM: f64 = 1e-10;

/// A raw constraint: value, bound and parameter gradient of the value.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConstraint {
    pub value: f64,
    pub bound: f64,
    pub gradient: Vec<f64>,
}

/// Unit-normalized objective and constraint directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub g: Vec<f64>,
    pub objective_norm: f64,
    pub c: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    /// Index into the raw list of each kept constraint.
    pub kept: Vec<usize>,
    /// Raw constraints dropped for a vanishing gradient.
    pub degenerate: Vec<usize>,
}

/// `g = ∇J/‖∇J‖`, `c_τ = ∇J_τ/‖∇J_τ‖`, `z_τ = (J_τ − b_τ)/‖∇J_τ‖`.
pub fn normalize(raw_objective: &[f64], raw: &[RawConstraint]) -> Result<Normalized, TrError> {
    let objective_norm = dot(raw_objective, raw_objective).sqrt();
    if !(objective_norm >= EPS_NORM) {
        return Err(TrError::DegenerateObjective { norm: objective_norm });
    }
    let g = raw_objective.iter().map(|v| v / objective_norm).collect();
    let mut out = Normalized {
        g,
        objective_norm,
        c: Vec::new(),
        z: Vec::new(),
        kept: Vec::new(),
        degenerate: Vec::new(),
    };
    for (i, rc) in raw.iter().enumerate() {
        if rc.gradient.len() != raw_objective.len() {
            return Err(TrError::Dimension {
                expected: raw_objective.len(),
                got: rc.gradient.len(),
            });
        }
        let n = dot(&rc.gradient, &rc.gradient).sqrt();
        if !(n >= EPS_NORM) {
            out.degenerate.push(i);
            continue;
        }
        out.c.push(rc.gradient.iter().map(|v| v / n).collect());
        out.z.push((rc.value - rc.bound) / n);
        out.kept.push(i);
    }
    Ok(out)
}

/// Normalized linearization of the constrained step problem.
pub struct LinearizedStep<'a> {
    pub g: &'a [f64],
    pub c: &'a [Vec<f64>],
    pub z: &'a [f64],
    pub metric: &'a dyn MetricOperator,
    pub delta_a: f64,
    pub delta_b: f64,
}

impl<'a> LinearizedStep<'a> {
    pub fn from_normalized(n: &'a Normalized, metric: &'a dyn MetricOperator, delta_a: f64, delta_b: f64) -> Self {
        Self {
            g: &n.g,
            c: &n.c,
            z: &n.z,
            metric,
            delta_a,
            delta_b,
        }
    }

    fn validate(&self) -> Result<(), TrError> {
        if !(self.delta_a > 0.0 && self.delta_a < self.delta_b) {
            return Err(TrError::InvalidRadius { delta: self.delta_a });
        }
        if self.c.len() != self.z.len() {
            return Err(TrError::Dimension {
                expected: self.c.len(),
                got: self.z.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `δ_min < δ_a`: constrained step at `δ_a`.
    Feasible,
    /// `δ_a ≤ δ_min < δ_b`: constrained step at `δ_b`.
    NearFeasible,
    /// `δ_min ≥ δ_b`: penalty recovery step at `δ_b`.
    PenaltyRecovery,
    /// Plain gradient step, not produced by this module.
    Gradient,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Feasible => "feasible",
            Branch::NearFeasible => "near_feasible",
            Branch::PenaltyRecovery => "penalty_recovery",
            Branch::Gradient => "gradient",
        }
    }
}

/// Per-step diagnostic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub delta_min: f64,
    pub branch: Branch,
    pub lambda: Option<f64>,
    pub nu_norm: f64,
    pub solve_iterations: usize,
    pub dual_iterations: usize,
    /// `½ΔθᵀHΔθ`, measured by applying the metric to the returned step.
    pub step_metric: f64,
    pub delta_active: f64,
    pub constraint_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub branch: Branch,
    pub delta_theta: Vec<f64>,
    pub lambda: Option<f64>,
    pub nu: Vec<f64>,
    pub delta_min: f64,
    pub diagnostics: StepDiagnostics,
}

/// Softmax-like weights `p_τ e^{z_τ} / Σ p_j e^{z_j}` with `p = 5` on violated constraints.
pub fn recovery_weights(z: &[f64]) -> Vec<f64> {
    if z.is_empty() {
        return Vec::new();
    }
    let shift = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = z
        .iter()
        .map(|&v| {
            let p = if v > 0.0 { 5.0 } else { 1.0 };
            if shift == f64::INFINITY {
                if v == f64::INFINITY {
                    p
                } else {
                    0.0
                }
            } else {
                p * (v - shift).exp()
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryStep {
    pub delta_theta: Vec<f64>,
    pub mu_p: f64,
}

/// `Δθ = −√(2δ/μ_p) H⁻¹g_p` with `g_p = (1−η)g + η Σ α_τ c_τ`, reusing the solves in `coeffs`.
pub fn penalty_recovery_step(coeffs: &DualCoefficients, alpha: &[f64], eta: f64, delta: f64) -> Result<RecoveryStep, TrError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(TrError::InvalidEta { eta });
    }
    if alpha.len() != coeffs.constraint_count() {
        return Err(TrError::Dimension {
            expected: coeffs.constraint_count(),
            got: alpha.len(),
        });
    }
    let one = 1.0 - eta;
    let mut dir: Vec<f64> = coeffs.hinv_g.iter().map(|v| one * v).collect();
    for (a, hc) in alpha.iter().zip(&coeffs.hinv_c) {
        let w = eta * a;
        if w != 0.0 {
            for (d, h) in dir.iter_mut().zip(hc) {
                *d += w * h;
            }
        }
    }
    let a = nalgebra::DVector::from_column_slice(alpha);
    let mu_p = one * one * coeffs.mu + 2.0 * eta * one * a.dot(&coeffs.r) + eta * eta * a.dot(&(&coeffs.s * &a));
    let scale_ref = coeffs.mu.max(coeffs.s.diagonal().iter().fold(0.0f64, |m, v| m.max(*v)));
    if !(mu_p > 1e-14 * scale_ref) {
        return Err(TrError::DegenerateRecovery { mu_p });
    }
    let k = (2.0 * delta / mu_p).sqrt();
    Ok(RecoveryStep {
        delta_theta: dir.iter().map(|v| -k * v).collect(),
        mu_p,
    })
}

fn finish(
    step: &LinearizedStep<'_>,
    coeffs: &DualCoefficients,
    branch: Branch,
    delta_theta: Vec<f64>,
    lambda: Option<f64>,
    nu: Vec<f64>,
    delta_min: f64,
    delta_active: f64,
    dual_iterations: usize,
) -> Result<StepOutcome, TrError> {
    let step_metric = step.metric.half_norm(&delta_theta)?;
    let diagnostics = StepDiagnostics {
        delta_min,
        branch,
        lambda,
        nu_norm: dot(&nu, &nu).sqrt(),
        solve_iterations: coeffs.solve_iterations,
        dual_iterations,
        step_metric,
        delta_active,
        constraint_count: step.c.len(),
    };
    Ok(StepOutcome {
        branch,
        delta_theta,
        lambda,
        nu,
        delta_min,
        diagnostics,
    })
}

/// Constrained step at radius `delta` from the main dual: `Δθ = −H⁻¹(g + Cν*)/λ*`.
pub fn constrained_step(coeffs: &DualCoefficients, z: &[f64], delta: f64, settings: DualSettings) -> Result<(Vec<f64>, f64, Vec<f64>, usize), TrError> {
    let dual = solve_main_dual(coeffs, z, delta, settings)?;
    let dir = coeffs.combined_direction(&dual.nu);
    let inv = 1.0 / dual.lambda;
    Ok((dir.iter().map(|v| -v * inv).collect(), dual.lambda, dual.nu, dual.iterations))
}

/// Feasibility test, branch selection and the resulting parameter step.
pub fn policy_step(step: &LinearizedStep<'_>, eta: f64, settings: DualSettings) -> Result<StepOutcome, TrError> {
    step.validate()?;
    let coeffs = assemble_dual_coefficients(step.metric, step.g, step.c)?;
    let feas = solve_feasibility_dual(&coeffs.s, step.z, settings)?;
    let delta_min = feas.delta_min;
    let (branch, delta) = if delta_min < step.delta_a {
        (Branch::Feasible, step.delta_a)
    } else if delta_min < step.delta_b {
        (Branch::NearFeasible, step.delta_b)
    } else {
        (Branch::PenaltyRecovery, step.delta_b)
    };
    if branch == Branch::PenaltyRecovery {
        let alpha = recovery_weights(step.z);
        let rec = penalty_recovery_step(&coeffs, &alpha, eta, delta)?;
        return finish(step, &coeffs, branch, rec.delta_theta, None, Vec::new(), delta_min, delta, feas.iterations);
    }
    let (dtheta, lambda, nu, iters) = constrained_step(&coeffs, step.z, delta, settings)?;
    finish(step, &coeffs, branch, dtheta, Some(lambda), nu, delta_min, delta, feas.iterations + iters)
}

/// Unconstrained trust-region step at `δ_a`.
pub fn unconstrained_step(g: &[f64], metric: &dyn MetricOperator, delta: f64) -> Result<StepOutcome, TrError> {
    let coeffs = assemble_dual_coefficients(metric, g, &[])?;
    let step = LinearizedStep {
        g,
        c: &[],
        z: &[],
        metric,
        delta_a: delta,
        delta_b: f64::INFINITY,
    };
    let (dtheta, lambda, nu, iters) = constrained_step(&coeffs, &[], delta, DualSettings::default())?;
    finish(&step, &coeffs, Branch::Feasible, dtheta, Some(lambda), nu, 0.0, delta, iters)
}

/// Penalty step at a fixed radius regardless of feasibility.
pub fn fixed_penalty_step(step: &LinearizedStep<'_>, eta: f64, delta: f64) -> Result<StepOutcome, TrError> {
    let coeffs = assemble_dual_coefficients(step.metric, step.g, step.c)?;
    let alpha = recovery_weights(step.z);
    let eta = if step.c.is_empty() { 0.0 } else { eta };
    let rec = penalty_recovery_step(&coeffs, &alpha, eta, delta)?;
    finish(step, &coeffs, Branch::PenaltyRecovery, rec.delta_theta, None, Vec::new(), f64::NAN, delta, 0)
}
