use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::TrError;
use crate::netcore::{NetworkSpec, ParamVector};

/// Result of one `H⁻¹ b` solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solve {
    pub x: Vec<f64>,
    /// Iterations used by an iterative method; 0 for direct methods.
    pub iterations: usize,
}

/// A symmetric positive definite metric `H` in parameter space.
pub trait MetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, TrError>;
    fn solve(&self, rhs: &[f64]) -> Result<Solve, TrError>;

    /// `H⁻¹ b` for several right-hand sides.
    fn solve_many(&self, rhs: &[&[f64]]) -> Result<Vec<Solve>, TrError> {
        rhs.iter().map(|b| self.solve(b)).collect()
    }

    /// `½ vᵀ H v`.
    fn half_norm(&self, v: &[f64]) -> Result<f64, TrError> {
        let hv = self.apply(v)?;
        Ok(0.5 * dot(v, &hv))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 250,
        }
    }
}

/// Conjugate gradients on `H x = rhs` until `‖Hx − rhs‖ ≤ tol·‖rhs‖`.
pub fn cg_solve<F>(apply: F, rhs: &[f64], settings: CgSettings) -> Result<Solve, TrError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, TrError>,
{
    let n = rhs.len();
    let rhs_norm = norm(rhs);
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok(Solve { x, iterations: 0 });
    }
    let target = settings.tol * rhs_norm;
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 1..=settings.max_iters {
        let hp = apply(&p)?;
        let php = dot(&p, &hp);
        if php <= 0.0 || !php.is_finite() {
            return Err(TrError::NotPositiveDefinite { curvature: php });
        }
        let alpha = rr / php;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            return Ok(Solve { x, iterations: it });
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(TrError::CgNotConverged {
        iterations: settings.max_iters,
        residual: rr.sqrt() / rhs_norm,
    })
}

/// Matrix-free Gauss-Newton metric of the mean squared policy difference, inverted by CG.
pub struct GaussNewtonMetric<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ParamVector,
    pub states: &'a [Vec<f64>],
    pub damping: f64,
    pub cg: CgSettings,
}

impl MetricOperator for GaussNewtonMetric<'_> {
    fn dim(&self) -> usize {
        self.params.len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, TrError> {
        let v = self.params.with_values(v.to_vec());
        Ok(self
            .spec
            .gn_metric_vp(self.params, self.states, &v, self.damping)?
            .into_values())
    }

    fn solve(&self, rhs: &[f64]) -> Result<Solve, TrError> {
        cg_solve(|v| self.apply(v), rhs, self.cg)
    }
}

/// `H = c KᵀK + d I` from explicit Jacobian rows `K`, inverted exactly by Woodbury:
/// `H⁻¹ = (1/d)[I − Kᵀ((d/c) I + KKᵀ)⁻¹ K]`.
pub struct JacobianMetric {
    /// `Kᵀ`, so each Jacobian row is a contiguous column.
    cols: DMatrix<f64>,
    rows: DMatrix<f64>,
    weight: f64,
    damping: f64,
    inner: Cholesky<f64, Dyn>,
}

/// Dot product with independent partial sums so the loop vectorizes.
fn column_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

impl JacobianMetric {
    pub fn new(rows: DMatrix<f64>, weight: f64, damping: f64) -> Result<Self, TrError> {
        Self::from_columns(rows.transpose(), weight, damping)
    }

    /// Same as [`JacobianMetric::new`] with `Kᵀ` given directly.
    pub fn from_columns(cols: DMatrix<f64>, weight: f64, damping: f64) -> Result<Self, TrError> {
        if damping <= 0.0 || weight < 0.0 {
            return Err(TrError::NotPositiveDefinite { curvature: damping });
        }
        let r = cols.ncols();
        let rows = cols.transpose();
        let gram = if weight > 0.0 {
            let mut gram = &rows * &cols;
            let shift = damping / weight;
            for i in 0..r {
                gram[(i, i)] += shift;
            }
            gram
        } else {
            DMatrix::identity(r, r)
        };
        let inner = Cholesky::new(gram).ok_or(TrError::NotPositiveDefinite { curvature: 0.0 })?;
        Ok(Self {
            cols,
            rows,
            weight,
            damping,
            inner,
        })
    }

    /// Gauss-Newton metric `(2/|S|) Σ J(x)ᵀJ(x) + d I` of a policy network.
    pub fn from_policy(spec: &NetworkSpec, params: &ParamVector, states: &[Vec<f64>], damping: f64) -> Result<Self, TrError> {
        if states.is_empty() {
            return Err(TrError::EmptyStateSet);
        }
        let p = params.len();
        let m = spec.output_dim;
        let mut cols = DMatrix::zeros(p, states.len() * m);
        for (s, x) in states.iter().enumerate() {
            for (k, row) in spec.param_jacobian(params, x)?.into_iter().enumerate() {
                cols.column_mut(s * m + k).copy_from_slice(&row);
            }
        }
        Self::from_columns(cols, 2.0 / states.len() as f64, damping)
    }

    /// The stacked Jacobian `K`.
    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// `K v`.
    fn project(&self, v: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.cols.ncols(), (0..self.cols.ncols()).map(|i| column_dot(self.cols.column(i).as_slice(), v)))
    }

    /// `out += a Kᵀ y`.
    fn lift_into(&self, y: &DVector<f64>, a: f64, out: &mut [f64]) {
        for (i, yi) in y.iter().enumerate() {
            let w = a * yi;
            for (o, c) in out.iter_mut().zip(self.cols.column(i).as_slice()) {
                *o += w * c;
            }
        }
    }
}

impl MetricOperator for JacobianMetric {
    fn dim(&self) -> usize {
        self.cols.nrows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, TrError> {
        check_dim(v.len(), self.dim())?;
        let kv = self.project(v);
        let mut out: Vec<f64> = v.iter().map(|x| x * self.damping).collect();
        self.lift_into(&kv, self.weight, &mut out);
        Ok(out)
    }

    fn solve(&self, rhs: &[f64]) -> Result<Solve, TrError> {
        check_dim(rhs.len(), self.dim())?;
        let mut x = rhs.to_vec();
        if self.weight > 0.0 {
            let y = self.inner.solve(&self.project(rhs));
            self.lift_into(&y, -1.0, &mut x);
        }
        let inv = 1.0 / self.damping;
        x.iter_mut().for_each(|v| *v *= inv);
        Ok(Solve { x, iterations: 0 })
    }

    fn solve_many(&self, rhs: &[&[f64]]) -> Result<Vec<Solve>, TrError> {
        let p = self.dim();
        for b in rhs {
            check_dim(b.len(), p)?;
        }
        let mut b = DMatrix::zeros(p, rhs.len());
        for (j, col) in rhs.iter().enumerate() {
            b.column_mut(j).copy_from_slice(col);
        }
        if self.weight > 0.0 {
            let y = self.inner.solve(&(&self.rows * &b));
            b -= &self.cols * y;
        }
        b /= self.damping;
        Ok(b.column_iter()
            .map(|c| Solve {
                x: c.as_slice().to_vec(),
                iterations: 0,
            })
            .collect())
    }
}

/// Explicit dense SPD matrix.
pub struct DenseMetric {
    h: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl DenseMetric {
    pub fn new(h: DMatrix<f64>) -> Result<Self, TrError> {
        let chol = Cholesky::new(h.clone()).ok_or(TrError::NotPositiveDefinite { curvature: 0.0 })?;
        Ok(Self { h, chol })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }
}

impl MetricOperator for DenseMetric {
    fn dim(&self) -> usize {
        self.h.nrows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, TrError> {
        check_dim(v.len(), self.dim())?;
        Ok((&self.h * DVector::from_column_slice(v)).as_slice().to_vec())
    }

    fn solve(&self, rhs: &[f64]) -> Result<Solve, TrError> {
        check_dim(rhs.len(), self.dim())?;
        Ok(Solve {
            x: self.chol.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec(),
            iterations: 0,
        })
    }
}

fn check_dim(got: usize, expected: usize) -> Result<(), TrError> {
    if got != expected {
        return Err(TrError::Dimension { expected, got });
    }
    Ok(())
}
