//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Explicit instance of `min gᵀΔ` s.t. `½ΔᵀHΔ ≤ δ`, `z + CᵀΔ ≤ 0`.
pub struct QcqpInstance {
    pub h: DMatrix<f64>,
    pub g: Vec<f64>,
    pub c: Vec<Vec<f64>>,
    pub z: Vec<f64>,
}

fn unit<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / k).collect()
}

pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut h = &a * a.transpose() / n as f64;
    for i in 0..n {
        h[(i, i)] += 0.05;
    }
    (&h + h.transpose()) * 0.5
}

impl QcqpInstance {
    pub fn random<R: Rng>(n: usize, m: usize, rng: &mut R) -> Self {
        let h = random_spd(n, rng);
        let g = unit(n, rng);
        let c = (0..m).map(|_| unit(n, rng)).collect();
        let z = (0..m).map(|_| rng.gen_range(-0.4..0.4)).collect();
        Self { h, g, c, z }
    }

    /// Whitened data `L⁻¹g`, `L⁻¹c_τ` for `H = LLᵀ`, plus the factor.
    fn whitened(&self) -> (DMatrix<f64>, DVector<f64>, Vec<DVector<f64>>) {
        let l = self.h.clone().cholesky().expect("SPD").l();
        let solve = |v: &[f64]| l.solve_lower_triangular(&DVector::from_column_slice(v)).expect("nonsingular");
        let g = solve(&self.g);
        let c = self.c.iter().map(|ci| solve(ci)).collect();
        (l, g, c)
    }

    fn subsets(m: usize) -> impl Iterator<Item = Vec<usize>> {
        (0u32..(1u32 << m)).map(move |mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
    }

    /// Minimum-norm point of `{y : C_Aᵀ y = −z_A}` and the projector onto its direction space.
    fn affine_slice(c: &[DVector<f64>], z: &[f64], active: &[usize], n: usize) -> Option<(DVector<f64>, DMatrix<f64>)> {
        if active.is_empty() {
            return Some((DVector::zeros(n), DMatrix::identity(n, n)));
        }
        let k = active.len();
        let ca = DMatrix::from_fn(n, k, |r, j| c[active[j]][r]);
        let gram = ca.transpose() * &ca;
        let inv = gram.clone().try_inverse()?;
        let za = DVector::from_iterator(k, active.iter().map(|&i| z[i]));
        let y0 = -(&ca * (&inv * za));
        let proj = DMatrix::identity(n, n) - &ca * inv * ca.transpose();
        Some((y0, proj))
    }

    /// Exact `δ_min = min ½ΔᵀHΔ` s.t. `z + CᵀΔ ≤ 0` by active-set enumeration.
    pub fn oracle_delta_min(&self) -> f64 {
        let n = self.g.len();
        let (_, _, c) = self.whitened();
        let mut best = f64::INFINITY;
        for active in Self::subsets(self.c.len()) {
            let Some((y, _)) = Self::affine_slice(&c, &self.z, &active, n) else { continue };
            if c.iter().zip(&self.z).all(|(ci, zi)| zi + ci.dot(&y) <= 1e-10) {
                best = best.min(0.5 * y.norm_squared());
            }
        }
        best
    }

    /// Exact primal optimum `(gᵀΔ*, Δ*)` of the trust-region problem at radius `delta`.
    pub fn oracle_primal(&self, delta: f64) -> Option<(f64, Vec<f64>)> {
        let n = self.g.len();
        let (l, g, c) = self.whitened();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for active in Self::subsets(self.c.len()) {
            let Some((y0, proj)) = Self::affine_slice(&c, &self.z, &active, n) else { continue };
            let room = 2.0 * delta - y0.norm_squared();
            if room < 0.0 {
                continue;
            }
            let gp = &proj * &g;
            let gn = gp.norm();
            if gn < 1e-14 {
                continue;
            }
            let y = &y0 - gp * (room.sqrt() / gn);
            if !c.iter().zip(&self.z).all(|(ci, zi)| zi + ci.dot(&y) <= 1e-10) {
                continue;
            }
            let obj = g.dot(&y);
            if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                best = Some((obj, y));
            }
        }
        let (obj, y) = best?;
        let step = l.transpose().solve_upper_triangular(&y).expect("nonsingular");
        Some((obj, step.as_slice().to_vec()))
    }

    pub fn objective(&self, step: &[f64]) -> f64 {
        self.g.iter().zip(step).map(|(a, b)| a * b).sum()
    }

    pub fn max_violation(&self, step: &[f64]) -> f64 {
        self.c
            .iter()
            .zip(&self.z)
            .map(|(ci, zi)| zi + ci.iter().zip(step).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn half_metric(&self, step: &[f64]) -> f64 {
        let v = DVector::from_column_slice(step);
        0.5 * v.dot(&(&self.h * &v))
    }
}

/// Central difference of a scalar function along a direction.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Fourth-order five-point stencil of a scalar function along a direction.
pub fn five_point_difference<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Dykstra's alternating projections onto `{y : ½‖y‖² ≤ δ} ∩ {y : z_τ + c_τᵀy ≤ 0}`.
///
/// `delta = ∞` drops the ball. Converges to the exact Euclidean projection.
pub fn dykstra_project(point: &DVector<f64>, c: &[DVector<f64>], z: &[f64], delta: f64, max_cycles: usize) -> DVector<f64> {
    let n = point.len();
    let sets = c.len() + 1;
    let mut x = point.clone();
    let mut incr = vec![DVector::<f64>::zeros(n); sets];
    let radius = (2.0 * delta).sqrt();
    for _ in 0..max_cycles {
        let before = x.clone();
        for (k, p) in incr.iter_mut().enumerate() {
            let shifted = &x + &*p;
            let projected = if k == 0 {
                let norm = shifted.norm();
                if norm > radius { &shifted * (radius / norm) } else { shifted.clone() }
            } else {
                let (ci, zi) = (&c[k - 1], z[k - 1]);
                let excess = zi + ci.dot(&shifted);
                if excess > 0.0 { &shifted - ci * (excess / ci.norm_squared()) } else { shifted.clone() }
            };
            *p = &shifted - &projected;
            x = projected;
        }
        if (&x - &before).norm() <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
    }
    x
}

impl QcqpInstance {
    /// `δ_min` as half the squared norm of the projection of the origin onto
    /// the whitened constraint polyhedron.
    pub fn dykstra_delta_min(&self) -> f64 {
        let (_, _, c) = self.whitened();
        let y = dykstra_project(&DVector::zeros(self.g.len()), &c, &self.z, f64::INFINITY, 200_000);
        0.5 * y.norm_squared()
    }

    /// Projected-gradient primal solve of the trust-region problem in whitened
    /// coordinates: `y ← P(y − t ĝ)` with the projection done by Dykstra.
    /// Returns the objective, the step and the number of outer iterations.
    pub fn projected_gradient_primal(&self, delta: f64, max_iters: usize) -> (f64, Vec<f64>, usize) {
        let (l, g, c) = self.whitened();
        let t = (2.0 * delta).sqrt() / g.norm();
        let mut y = DVector::zeros(self.g.len());
        let mut iters = 0;
        for k in 0..max_iters {
            iters = k + 1;
            let next = dykstra_project(&(&y - &g * t), &c, &self.z, delta, 200_000);
            let moved = (&next - &y).norm();
            y = next;
            if moved <= 1e-14 * (1.0 + y.norm()) {
                break;
            }
        }
        let step = l.transpose().solve_upper_triangular(&y).expect("nonsingular");
        (g.dot(&y), step.as_slice().to_vec(), iters)
    }
}
