//! Linear time-invariant model with quadratic utility.
//!
//! Discrete LQR has a closed-form optimum through the algebraic Riccati
//! equation, which makes this model the reference for the unconstrained
//! training path.

use nalgebra::DMatrix;

use super::model::{check_len, ConstraintEval, ModelError, StepLinearization, SystemModel, UtilityEval};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Optional symmetric box `|x_j| <= bound_j`; `None` entries are unconstrained.
    pub state_bounds: Vec<Option<f64>>,
}

impl LtiModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = a.nrows();
        let m = b.ncols();
        let dims_ok = a.ncols() == n && b.nrows() == n && q.shape() == (n, n) && r.shape() == (m, m);
        if !dims_ok || n == 0 || m == 0 {
            return Err(ModelError::InvalidParams(format!(
                "inconsistent shapes A{:?} B{:?} Q{:?} R{:?}",
                a.shape(),
                b.shape(),
                q.shape(),
                r.shape()
            )));
        }
        Ok(Self {
            a,
            b,
            q,
            r,
            state_bounds: vec![None; n],
        })
    }

    pub fn with_state_bounds(mut self, bounds: Vec<Option<f64>>) -> Result<Self, ModelError> {
        check_len_generic("state_bounds", bounds.len(), self.a.nrows())?;
        self.state_bounds = bounds;
        Ok(self)
    }

    /// `x' = [[1, dt], [0, 1]] x + [0, dt] u` with identity state weight.
    pub fn double_integrator(dt: f64) -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, dt]),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .expect("static shapes")
    }

    fn active_bounds(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.state_bounds.iter().enumerate().filter_map(|(j, b)| b.map(|b| (j, b)))
    }
}

fn check_len_generic(what: &'static str, got: usize, expected: usize) -> Result<(), ModelError> {
    if got != expected {
        return Err(ModelError::Dimension { what, expected, got });
    }
    Ok(())
}

impl SystemModel for LtiModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn state_names(&self) -> Vec<String> {
        (0..self.state_dim()).map(|i| format!("x{i}")).collect()
    }

    fn control_names(&self) -> Vec<String> {
        (0..self.control_dim()).map(|i| format!("u{i}")).collect()
    }

    fn constraint_names(&self) -> Vec<String> {
        self.active_bounds().map(|(j, _)| format!("abs_x{j}")).collect()
    }

    fn check_state(&self, x: &[f64]) -> Result<(), ModelError> {
        check_len("state", x, self.state_dim())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_state(x)?;
        check_len("control", u, self.control_dim())?;
        let next = &self.a * nalgebra::DVector::from_column_slice(x) + &self.b * nalgebra::DVector::from_column_slice(u);
        Ok(next.as_slice().to_vec())
    }

    fn linearize(&self, x: &[f64], u: &[f64]) -> Result<StepLinearization, ModelError> {
        Ok(StepLinearization {
            next: self.step(x, u)?,
            dx: self.a.clone(),
            du: self.b.clone(),
        })
    }

    fn utility(&self, x: &[f64], u: &[f64]) -> UtilityEval {
        let xv = nalgebra::DVector::from_column_slice(x);
        let uv = nalgebra::DVector::from_column_slice(u);
        let qx = &self.q * &xv;
        let ru = &self.r * &uv;
        let dx = (&self.q + self.q.transpose()) * &xv;
        let du = (&self.r + self.r.transpose()) * &uv;
        UtilityEval {
            value: xv.dot(&qx) + uv.dot(&ru),
            dx: dx.as_slice().to_vec(),
            du: du.as_slice().to_vec(),
        }
    }

    fn constraints(&self, x: &[f64], _u_prev: &[f64]) -> Result<Vec<ConstraintEval>, ModelError> {
        check_len("state", x, self.state_dim())?;
        Ok(self
            .active_bounds()
            .map(|(j, bound)| {
                let mut dx = vec![0.0; self.state_dim()];
                dx[j] = if x[j] > 0.0 {
                    1.0
                } else if x[j] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                ConstraintEval {
                    value: x[j].abs(),
                    bound,
                    dx,
                    du: vec![0.0; self.control_dim()],
                }
            })
            .collect())
    }
}

/// Discounted discrete LQR by fixed-point iteration of the Riccati recursion.
///
/// Minimizes `Σ γ^k (xᵀQx + uᵀRu)`; returns `(P, K)` with optimal cost
/// `xᵀPx` and control `u = -Kx`.
pub fn discrete_lqr(model: &LtiModel, gamma: f64, tol: f64, max_iters: usize) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
    let (a, b, q, r) = (&model.a, &model.b, &model.q, &model.r);
    let mut p = q.clone();
    for _ in 0..max_iters {
        let btp = b.transpose() * &p;
        let gain_lhs = r + gamma * &btp * b;
        let gain_rhs = gamma * &btp * a;
        let k = gain_lhs
            .clone()
            .lu()
            .solve(&gain_rhs)
            .ok_or_else(|| ModelError::InvalidParams("singular R + γBᵀPB".into()))?;
        let closed = a - b * &k;
        let next = q + k.transpose() * r * &k + gamma * closed.transpose() * &p * &closed;
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &p).abs().max();
        p = next;
        if diff <= tol * p.abs().max().max(1.0) {
            let btp = b.transpose() * &p;
            let k = (r + gamma * &btp * b)
                .lu()
                .solve(&(gamma * &btp * a))
                .ok_or_else(|| ModelError::InvalidParams("singular R + γBᵀPB".into()))?;
            return Ok((p, k));
        }
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(ModelError::InvalidParams("Riccati recursion did not converge (system not stabilizable?)".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_follows_matrix_powers() {
        let m = LtiModel::double_integrator(0.1);
        let mut x = vec![0.5, -0.2];
        let mut want = nalgebra::DVector::from_column_slice(&x);
        for _ in 0..10 {
            x = m.step(&x, &[0.0]).unwrap();
            want = &m.a * want;
        }
        assert!((x[0] - want[0]).abs() < 1e-15 && (x[1] - want[1]).abs() < 1e-15);
    }

    #[test]
    fn utility_and_partials() {
        let m = LtiModel::double_integrator(0.1);
        let l = m.utility(&[1.0, 2.0], &[3.0]);
        assert_eq!(l.value, 1.0 + 4.0 + 9.0);
        assert_eq!(l.dx, vec![2.0, 4.0]);
        assert_eq!(l.du, vec![6.0]);
    }

    #[test]
    fn riccati_matches_known_double_integrator_gain() {
        // undiscounted gain for A=[[1,.1],[0,1]], B=[0,.1], Q=I, R=1
        let m = LtiModel::double_integrator(0.1);
        let (p, k) = discrete_lqr(&m, 1.0, 1e-13, 100_000).unwrap();
        assert!((k[(0, 0)] - 0.917_041_55).abs() < 1e-6);
        assert!((k[(0, 1)] - 1.682_052_16).abs() < 1e-6);
        // P solves the Riccati equation
        let btp = m.b.transpose() * &p;
        let resid = &m.q + m.a.transpose() * &p * &m.a
            - m.a.transpose() * &p * &m.b * (&m.r + &btp * &m.b).try_inverse().unwrap() * &btp * &m.a
            - &p;
        assert!(resid.abs().max() < 1e-9);
    }

    #[test]
    fn box_constraints() {
        let m = LtiModel::double_integrator(0.1).with_state_bounds(vec![None, Some(0.5)]).unwrap();
        assert_eq!(m.constraint_names(), vec!["abs_x1".to_string()]);
        let c = m.constraints(&[3.0, -0.7], &[0.0]).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].value, 0.7);
        assert_eq!(c[0].dx, vec![0.0, -1.0]);
        assert!(!c[0].satisfied());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let err = LtiModel::new(DMatrix::identity(2, 2), DMatrix::zeros(3, 1), DMatrix::identity(2, 2), DMatrix::identity(1, 1));
        assert!(err.is_err());
    }
}
