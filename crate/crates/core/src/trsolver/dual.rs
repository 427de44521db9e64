//! Low-dimensional duals of the linearized trust-region problem.
//!
//! With `A(ν) = μ + νᵀSν + 2νᵀr`, the main dual maximizes
//! `νᵀz − √(2δ A(ν))` over `ν ≥ 0` after eliminating `λ* = √(A/(2δ))`.
//! The feasibility dual maximizes `−½νᵀSν + νᵀz` over `ν ≥ 0`; its optimal
//! value is the smallest radius `δ_min` at which the linearized constraints
//! can be met.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::metric::{dot, MetricOperator};
use super::TrError;

/// `μ = gᵀH⁻¹g`, `S = CᵀH⁻¹C`, `r = CᵀH⁻¹g` together with the solves they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCoefficients {
    pub mu: f64,
    pub s: DMatrix<f64>,
    pub r: DVector<f64>,
    pub hinv_g: Vec<f64>,
    pub hinv_c: Vec<Vec<f64>>,
    /// Total iterations of the iterative metric solves.
    pub solve_iterations: usize,
}

impl DualCoefficients {
    pub fn constraint_count(&self) -> usize {
        self.hinv_c.len()
    }

    /// `A(ν) = (g + Cν)ᵀ H⁻¹ (g + Cν)`.
    pub fn quadratic(&self, nu: &[f64]) -> f64 {
        let nu_v = DVector::from_column_slice(nu);
        self.mu + nu_v.dot(&(&self.s * &nu_v)) + 2.0 * nu_v.dot(&self.r)
    }

    /// `H⁻¹(g + Cν)`.
    pub fn combined_direction(&self, nu: &[f64]) -> Vec<f64> {
        let mut d = self.hinv_g.clone();
        for (n, hc) in nu.iter().zip(&self.hinv_c) {
            if *n != 0.0 {
                for (a, b) in d.iter_mut().zip(hc) {
                    *a += n * b;
                }
            }
        }
        d
    }
}

/// One `H⁻¹` solve per direction; `S` is symmetrized.
pub fn assemble_dual_coefficients(metric: &dyn MetricOperator, g: &[f64], c: &[Vec<f64>]) -> Result<DualCoefficients, TrError> {
    let mut rhs: Vec<&[f64]> = Vec::with_capacity(c.len() + 1);
    rhs.push(g);
    rhs.extend(c.iter().map(Vec::as_slice));
    let mut solves = metric.solve_many(&rhs)?.into_iter();
    let sg = solves.next().expect("one solve per right-hand side");
    let mut iterations = sg.iterations;
    let hinv_g = sg.x;
    let mut hinv_c = Vec::with_capacity(c.len());
    for s in solves {
        iterations += s.iterations;
        hinv_c.push(s.x);
    }
    let m = c.len();
    let mut s = DMatrix::zeros(m, m);
    let mut r = DVector::zeros(m);
    for i in 0..m {
        r[i] = dot(&c[i], &hinv_g);
        for j in 0..m {
            s[(i, j)] = dot(&c[i], &hinv_c[j]);
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    Ok(DualCoefficients {
        mu: dot(g, &hinv_g),
        s,
        r,
        hinv_g,
        hinv_c,
        solve_iterations: iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSettings {
    /// Stop when the projected-gradient norm is at most this.
    pub tol: f64,
    pub max_iters: usize,
    /// Iterates with a larger norm are taken as evidence of an unbounded dual.
    pub divergence_norm: f64,
}

impl Default for DualSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 10_000,
            divergence_norm: 1e10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum BoxOutcome {
    Converged { x: Vec<f64>, value: f64, iterations: usize, residual: f64 },
    Unbounded { x: Vec<f64> },
    /// No acceptable descent step remains; the caller decides what the last iterate means.
    Stalled { x: Vec<f64>, iterations: usize, residual: f64 },
}

fn projected_gradient_norm(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(xi, gi)| if *xi > 0.0 { *gi } else { gi.min(0.0) })
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Projected Newton minimization of a smooth convex `f` over `x ≥ 0`.
///
/// `eval` returns `(f, ∇f, ∇²f)`. Variables at the bound with a pushing
/// gradient are held by a scaled gradient step; the rest take a Newton step.
/// Steps are backtracked along the projection arc, falling back to a plain
/// projected gradient step when the Newton step is not a descent step.
fn minimize_nonneg<F>(dim: usize, eval: F, settings: DualSettings) -> Result<BoxOutcome, TrError>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>, DMatrix<f64>),
{
    const SIGMA: f64 = 1e-4;
    const EPS_ACTIVE: f64 = 1e-8;
    let mut x = vec![0.0; dim];
    let (mut f, mut g, mut h) = eval(&x);
    let mut residual = projected_gradient_norm(&x, &g);
    for it in 0..settings.max_iters {
        if residual <= settings.tol {
            return Ok(BoxOutcome::Converged { x, value: f, iterations: it, residual });
        }
        if dot(&x, &x).sqrt() > settings.divergence_norm {
            return Ok(BoxOutcome::Unbounded { x });
        }
        let gap = x
            .iter()
            .zip(&g)
            .map(|(xi, gi)| {
                let d = xi - (xi - gi).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt();
        let eps = EPS_ACTIVE.min(gap);
        let active: Vec<bool> = x.iter().zip(&g).map(|(xi, gi)| *xi <= eps && *gi > 0.0).collect();
        let free: Vec<usize> = (0..dim).filter(|&i| !active[i]).collect();

        let mut dir = vec![0.0; dim];
        for i in 0..dim {
            if active[i] {
                let hii = h[(i, i)];
                dir[i] = if hii.is_finite() && hii > 0.0 { -g[i] / hii } else { -g[i] };
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            let gf = DVector::from_iterator(k, free.iter().map(|&i| -g[i]));
            // Newton on the free block; a Hessian that stays indefinite or is not finite
            // (curvature blows up where the dual is not smooth) falls back to −g.
            let mut step = None;
            if hff.iter().all(|v| v.is_finite()) {
                let diag_scale = (0..k).map(|i| hff[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
                let mut reg = 0.0;
                while step.is_none() && reg <= 1e12 * diag_scale {
                    let mut m = hff.clone();
                    for i in 0..k {
                        m[(i, i)] += reg;
                    }
                    step = m.cholesky().map(|ch| ch.solve(&gf));
                    reg = if reg == 0.0 { 1e-14 * diag_scale } else { reg * 10.0 };
                }
            }
            let step = step.unwrap_or(gf);
            for (a, &i) in free.iter().enumerate() {
                dir[i] = step[a];
            }
        }

        let project = |alpha: f64, d: &[f64]| -> Vec<f64> { x.iter().zip(d).map(|(xi, di)| (xi + alpha * di).max(0.0)).collect() };
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..60 {
            let xn = project(alpha, &dir);
            let predicted: f64 = (0..dim)
                .map(|i| if active[i] { g[i] * (x[i] - xn[i]) } else { -alpha * g[i] * dir[i] })
                .sum();
            let (fnew, _, _) = eval(&xn);
            if predicted > 0.0 && fnew.is_finite() && f - fnew >= SIGMA * predicted {
                accepted = Some(xn);
                break;
            }
            alpha *= 0.5;
        }
        if accepted.is_none() {
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            // 1/curvature, capped so that flat directions still start at a finite move
            let curvature = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let cap = 1e8 * (1.0 + dot(&x, &x).sqrt()) / dot(&g, &g).sqrt().max(1e-300);
            let mut alpha = if curvature.is_finite() && curvature > 0.0 { (1.0 / curvature).min(cap) } else { cap };
            for _ in 0..100 {
                let xn = project(alpha, &neg_g);
                let predicted: f64 = g.iter().zip(&x).zip(&xn).map(|((gi, xi), yi)| gi * (xi - yi)).sum();
                let (fnew, _, _) = eval(&xn);
                if predicted > 0.0 && fnew.is_finite() && f - fnew >= SIGMA * predicted {
                    accepted = Some(xn);
                    break;
                }
                alpha *= 0.5;
            }
        }
        match accepted {
            Some(xn) => {
                let (fn_, gn, hn) = eval(&xn);
                if !(fn_.is_finite() && gn.iter().all(|v| v.is_finite())) {
                    return Ok(BoxOutcome::Stalled { x, iterations: it, residual });
                }
                (x, f, g, h) = (xn, fn_, gn, hn);
                residual = projected_gradient_norm(&x, &g);
            }
            // no representable decrease left
            None if residual <= settings.tol.sqrt() => {
                return Ok(BoxOutcome::Converged { x, value: f, iterations: it, residual });
            }
            None => return Ok(BoxOutcome::Stalled { x, iterations: it, residual }),
        }
    }
    if residual <= settings.tol {
        return Ok(BoxOutcome::Converged {
            x,
            value: f,
            iterations: settings.max_iters,
            residual,
        });
    }
    Ok(BoxOutcome::Stalled {
        x,
        iterations: settings.max_iters,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilitySolution {
    /// Smallest trust-region radius admitting a linearized-feasible step; `+∞` when none does.
    pub delta_min: f64,
    pub nu: Vec<f64>,
    pub iterations: usize,
}

/// Maximizes `−½νᵀSν + νᵀz` over `ν ≥ 0`.
pub fn solve_feasibility_dual(s: &DMatrix<f64>, z: &[f64], settings: DualSettings) -> Result<FeasibilitySolution, TrError> {
    let m = z.len();
    if s.nrows() != m || s.ncols() != m {
        return Err(TrError::Dimension { expected: m, got: s.nrows() });
    }
    if m == 0 {
        return Ok(FeasibilitySolution {
            delta_min: 0.0,
            nu: Vec::new(),
            iterations: 0,
        });
    }
    let outcome = minimize_nonneg(
        m,
        |nu| {
            let v = DVector::from_column_slice(nu);
            let sv = s * &v;
            let f = 0.5 * v.dot(&sv) - dot(nu, z);
            let g: Vec<f64> = sv.iter().zip(z).map(|(a, b)| a - b).collect();
            (f, g, s.clone())
        },
        settings,
    )?;
    Ok(match outcome {
        BoxOutcome::Converged { x, value, iterations, .. } => FeasibilitySolution {
            delta_min: (-value).max(0.0),
            nu: x,
            iterations,
        },
        BoxOutcome::Unbounded { x } => FeasibilitySolution {
            delta_min: f64::INFINITY,
            nu: x,
            iterations: settings.max_iters,
        },
        BoxOutcome::Stalled { iterations, residual, .. } => return Err(TrError::DualNotConverged { iterations, residual }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainDualSolution {
    pub lambda: f64,
    pub nu: Vec<f64>,
    /// Optimal dual value, equal to the primal optimum `gᵀΔθ*`.
    pub value: f64,
    pub iterations: usize,
    /// Projected-gradient norm at exit.
    pub residual: f64,
}

/// Maximizes `−A(ν)/(2λ) − λδ + νᵀz` over `λ > 0`, `ν ≥ 0`.
pub fn solve_main_dual(coeffs: &DualCoefficients, z: &[f64], delta: f64, settings: DualSettings) -> Result<MainDualSolution, TrError> {
    let m = z.len();
    if coeffs.constraint_count() != m {
        return Err(TrError::Dimension {
            expected: coeffs.constraint_count(),
            got: m,
        });
    }
    if !(coeffs.mu > 0.0) {
        return Err(TrError::DegenerateObjective { norm: coeffs.mu });
    }
    if !(delta > 0.0) {
        return Err(TrError::InvalidRadius { delta });
    }
    let scale = (2.0 * delta).sqrt();
    // keeps the Hessian's 1/A^{3/2} finite
    let floor = coeffs.mu * 1e-30;
    let outcome = if m == 0 {
        BoxOutcome::Converged {
            x: Vec::new(),
            value: scale * coeffs.mu.sqrt(),
            iterations: 0,
            residual: 0.0,
        }
    } else {
        minimize_nonneg(
            m,
            |nu| {
                let v = DVector::from_column_slice(nu);
                let w = &coeffs.s * &v + &coeffs.r;
                let a = (coeffs.mu + v.dot(&(&coeffs.s * &v)) + 2.0 * v.dot(&coeffs.r)).max(floor);
                let sa = a.sqrt();
                // f = −F = √(2δA) − νᵀz
                let f = scale * sa - dot(nu, z);
                let g: Vec<f64> = w.iter().zip(z).map(|(wi, zi)| scale * wi / sa - zi).collect();
                let h = (&coeffs.s / sa - (&w * w.transpose()) / (a * sa)) * scale;
                (f, g, (&h + h.transpose()) * 0.5)
            },
            settings,
        )?
    };
    // Relative cancellation of g + Cν: the dual optimum sits at λ = 0, outside the formula's reach.
    let cancelled = |nu: &[f64]| {
        let a = coeffs.quadratic(nu);
        let parts = coeffs.mu.sqrt() + nu.iter().enumerate().map(|(i, v)| v * coeffs.s[(i, i)].max(0.0).sqrt()).sum::<f64>();
        (a <= 1e-10 * parts * parts).then_some(a)
    };
    match outcome {
        BoxOutcome::Converged { ref x, .. } | BoxOutcome::Stalled { ref x, .. } if cancelled(x).is_some() => Err(TrError::TrustRegionInactive {
            cancelled: cancelled(x).unwrap_or_default(),
        }),
        BoxOutcome::Stalled { iterations, residual, .. } => Err(TrError::DualNotConverged { iterations, residual }),
        BoxOutcome::Converged {
            x,
            value,
            iterations,
            residual,
        } => {
            let a = coeffs.quadratic(&x);
            Ok(MainDualSolution {
                lambda: (a / (2.0 * delta)).sqrt(),
                value: -value,
                nu: x,
                iterations,
                residual,
            })
        }
        BoxOutcome::Unbounded { .. } => Err(TrError::Infeasible { delta }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trsolver::metric::DenseMetric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coeffs_from(mu: f64, s: DMatrix<f64>, r: Vec<f64>) -> DualCoefficients {
        let m = r.len();
        DualCoefficients {
            mu,
            s,
            r: DVector::from_vec(r),
            hinv_g: vec![0.0],
            hinv_c: vec![vec![0.0]; m],
            solve_iterations: 0,
        }
    }

    #[test]
    fn satisfied_constraints_give_zero_feasibility_radius() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let f = solve_feasibility_dual(&s, &[-0.5, -0.1], DualSettings::default()).unwrap();
        assert_eq!(f.nu, vec![0.0, 0.0]);
        assert_eq!(f.delta_min, 0.0);
    }

    #[test]
    fn single_constraint_feasibility_closed_form() {
        let s = DMatrix::from_element(1, 1, 4.0);
        let f = solve_feasibility_dual(&s, &[3.0], DualSettings::default()).unwrap();
        assert!((f.nu[0] - 0.75).abs() < 1e-12);
        assert!((f.delta_min - 9.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn conflicting_constraints_are_unbounded() {
        // c₂ = −c₁, both violated: no step satisfies both
        let s = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let f = solve_feasibility_dual(&s, &[0.5, 0.5], DualSettings::default()).unwrap();
        assert!(f.delta_min.is_infinite());
    }

    #[test]
    fn unconstrained_main_dual_closed_form() {
        let c = coeffs_from(2.5, DMatrix::zeros(0, 0), vec![]);
        let d = solve_main_dual(&c, &[], 1e-3, DualSettings::default()).unwrap();
        assert!((d.lambda - (2.5f64 / 2e-3).sqrt()).abs() < 1e-12 * d.lambda);
        assert!((d.value + (2e-3f64 * 2.5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn slack_constraints_leave_unconstrained_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = DenseMetric::new(&a * a.transpose() + DMatrix::identity(n, n)).unwrap();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let coeffs = assemble_dual_coefficients(&h, &g, &c).unwrap();
        let delta = 1e-4;
        let d = solve_main_dual(&coeffs, &[-10.0, -10.0, -10.0], delta, DualSettings::default()).unwrap();
        assert_eq!(d.nu, vec![0.0; 3]);
        assert!((d.lambda - (coeffs.mu / (2.0 * delta)).sqrt()).abs() < 1e-12 * d.lambda);
    }

    #[test]
    fn identical_direction_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = DenseMetric::new(&a * a.transpose() + DMatrix::identity(n, n)).unwrap();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coeffs = assemble_dual_coefficients(&h, &g, &[g.clone()]).unwrap();
        assert!((coeffs.s[(0, 0)] - coeffs.mu).abs() < 1e-12 * coeffs.mu);
        assert!((coeffs.r[0] - coeffs.mu).abs() < 1e-12 * coeffs.mu);
        let none = assemble_dual_coefficients(&h, &g, &[]).unwrap();
        assert_eq!(none.s.nrows(), 0);
        assert_eq!(none.mu, coeffs.mu);
    }

    #[test]
    fn main_dual_below_feasibility_radius_is_infeasible() {
        let c = coeffs_from(1.0, DMatrix::from_element(1, 1, 1.0), vec![0.0]);
        // δ_min = z²/(2s) = 50
        let err = solve_main_dual(&c, &[10.0], 1.0, DualSettings::default());
        assert!(matches!(err, Err(TrError::Infeasible { .. })));
        let ok = solve_main_dual(&c, &[10.0], 60.0, DualSettings::default()).unwrap();
        assert!(ok.nu[0] > 0.0);
    }

    #[test]
    fn constraints_that_bound_the_objective_are_reported() {
        // c = −g with slack z inside the ball: gᵀΔ ≥ z caps the objective, λ* = 0
        let c = coeffs_from(1.0, DMatrix::from_element(1, 1, 1.0), vec![-1.0]);
        let err = solve_main_dual(&c, &[-0.1], 0.5, DualSettings::default());
        assert!(matches!(err, Err(TrError::TrustRegionInactive { .. })), "{err:?}");
    }
}
