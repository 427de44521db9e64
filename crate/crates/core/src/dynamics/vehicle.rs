//! Vehicle lateral/longitudinal path tracking on a reference circle.
//!
//! State `[v_y, r, v_x, phi, y]`, control `[delta, a_x]`. Lateral tire forces
//! follow the Fiala law with friction reduced by the longitudinal force on
//! each axle. The discrete map is explicit Euler at the internal simulation
//! frequency with the control held over one sampling period.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::model::{check_len, ConstraintEval, ModelError, StepLinearization, SystemModel, UtilityEval};

pub const STATE_DIM: usize = 5;
pub const CONTROL_DIM: usize = 2;
/// Actuator limits for `[delta, a_x]`.
pub const CONTROL_LIMITS: [f64; CONTROL_DIM] = [0.35, 2.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Front cornering stiffness, N/rad.
    #[serde(rename = "C_f")]
    pub c_f: f64,
    #[serde(rename = "C_r")]
    pub c_r: f64,
    /// CG to front axle, m.
    pub a: f64,
    /// CG to rear axle, m.
    pub b: f64,
    pub m: f64,
    #[serde(rename = "I_z")]
    pub i_z: f64,
    pub mu: f64,
    /// Control (sampling) frequency, Hz.
    #[serde(rename = "f")]
    pub f_sample: f64,
    /// Internal integration frequency, Hz.
    pub f_sim: f64,
    /// Reference circle radius, m.
    #[serde(rename = "R")]
    pub radius: f64,
    pub g: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            c_f: 88000.0,
            c_r: 94000.0,
            a: 1.14,
            b: 1.40,
            m: 1500.0,
            i_z: 2420.0,
            mu: 1.0,
            f_sample: 40.0,
            f_sim: 200.0,
            radius: 50.0,
            g: 9.81,
        }
    }
}

/// Named view of a state vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub v_y: f64,
    pub r: f64,
    pub v_x: f64,
    pub phi: f64,
    pub y: f64,
}

impl VehicleState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.v_y, self.r, self.v_x, self.phi, self.y]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            v_y: x[0],
            r: x[1],
            v_x: x[2],
            phi: x[3],
            y: x[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleControl {
    pub delta: f64,
    pub a_x: f64,
}

impl VehicleControl {
    pub fn from_slice(u: &[f64]) -> Self {
        Self { delta: u[0], a_x: u[1] }
    }
}

/// Axle loads, longitudinal forces and lateral friction coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireLoads {
    pub f_zf: f64,
    pub f_zr: f64,
    pub mu_f: f64,
    pub mu_r: f64,
    pub f_xf: f64,
    pub f_xr: f64,
    /// ∂mu_f/∂a_x and ∂mu_r/∂a_x.
    pub dmu_f: f64,
    pub dmu_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipAngles {
    pub alpha_f: f64,
    pub alpha_r: f64,
    /// ∂alpha_f/∂(v_y, r, v_x); ∂alpha_f/∂delta is -1.
    pub dalpha_f: [f64; 3],
    pub dalpha_r: [f64; 3],
}

/// Fiala lateral force with partials in slip angle and in the friction limit `mu_eff·F_z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FialaForce {
    pub force: f64,
    pub d_alpha: f64,
    pub d_limit: f64,
    pub saturated: bool,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("C_f", self.c_f),
            ("C_r", self.c_r),
            ("a", self.a),
            ("b", self.b),
            ("m", self.m),
            ("I_z", self.i_z),
            ("mu", self.mu),
            ("f", self.f_sample),
            ("f_sim", self.f_sim),
            ("R", self.radius),
            ("g", self.g),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        let ratio = self.f_sim / self.f_sample;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(ModelError::InvalidParams(format!(
                "f_sim ({}) must be an integer multiple of f ({})",
                self.f_sim, self.f_sample
            )));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.f_sim / self.f_sample).round() as usize
    }

    pub fn slip_angles(&self, x: &VehicleState, u: &VehicleControl) -> Result<SlipAngles, ModelError> {
        if !(x.v_x > 0.0) {
            return Err(ModelError::NonPositiveSpeed { v_x: x.v_x });
        }
        let pf = (x.v_y + self.a * x.r) / x.v_x;
        let pr = (x.v_y - self.b * x.r) / x.v_x;
        let kf = 1.0 / (1.0 + pf * pf) / x.v_x;
        let kr = 1.0 / (1.0 + pr * pr) / x.v_x;
        Ok(SlipAngles {
            alpha_f: pf.atan() - u.delta,
            alpha_r: pr.atan(),
            dalpha_f: [kf, kf * self.a, -kf * pf],
            dalpha_r: [kr, -kr * self.b, -kr * pr],
        })
    }

    pub fn tire_loads_and_friction(&self, u: &VehicleControl) -> Result<TireLoads, ModelError> {
        let wheelbase = self.a + self.b;
        let f_zf = self.b / wheelbase * self.m * self.g;
        let f_zr = self.a / wheelbase * self.m * self.g;
        // rear-wheel drive; braking split evenly
        let (f_xf, f_xr, dfxf, dfxr) = if u.a_x >= 0.0 {
            (0.0, self.m * u.a_x, 0.0, self.m)
        } else {
            let half = self.m * u.a_x / 2.0;
            (half, half, self.m / 2.0, self.m / 2.0)
        };
        let lateral = |f_z: f64, f_x: f64, dfx: f64, axle: &'static str| -> Result<(f64, f64), ModelError> {
            let cap = self.mu * f_z;
            let sq = cap * cap - f_x * f_x;
            if sq < 0.0 {
                return Err(ModelError::FrictionCircle { axle });
            }
            let limit = sq.sqrt();
            let dlimit = if limit > 0.0 { -f_x * dfx / limit } else { 0.0 };
            Ok((limit / f_z, dlimit / f_z))
        };
        let (mu_f, dmu_f) = lateral(f_zf, f_xf, dfxf, "front")?;
        let (mu_r, dmu_r) = lateral(f_zr, f_xr, dfxr, "rear")?;
        Ok(TireLoads {
            f_zf,
            f_zr,
            mu_f,
            mu_r,
            f_xf,
            f_xr,
            dmu_f,
            dmu_r,
        })
    }

    /// Time derivative of the state (before the 1/f scaling).
    pub fn vehicle_derivative(&self, x: &VehicleState, u: &VehicleControl) -> Result<[f64; STATE_DIM], ModelError> {
        Ok(self.derivative_with_partials(x, u)?.0)
    }

    fn check_domain(&self, x: &VehicleState) -> Result<(), ModelError> {
        let all = [x.v_y, x.r, x.v_x, x.phi, x.y];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        if !(x.v_x > 0.0) {
            return Err(ModelError::NonPositiveSpeed { v_x: x.v_x });
        }
        if !(x.y < self.radius) {
            return Err(ModelError::OffTrack {
                y: x.y,
                radius: self.radius,
            });
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn derivative_with_partials(
        &self,
        x: &VehicleState,
        u: &VehicleControl,
    ) -> Result<([f64; STATE_DIM], [[f64; STATE_DIM]; STATE_DIM], [[f64; CONTROL_DIM]; STATE_DIM]), ModelError> {
        self.check_domain(x)?;
        let loads = self.tire_loads_and_friction(u)?;
        let slip = self.slip_angles(x, u)?;
        let front = fiala_lateral_force(slip.alpha_f, self.c_f, loads.mu_f, loads.f_zf);
        let rear = fiala_lateral_force(slip.alpha_r, self.c_r, loads.mu_r, loads.f_zr);

        let (sd, cd) = u.delta.sin_cos();
        let (sp, cp) = x.phi.sin_cos();
        let dist = self.radius - x.y;
        let along = x.v_x * cp - x.v_y * sp;

        let f = [
            (front.force * cd + rear.force) / self.m - x.v_x * x.r,
            (self.a * front.force * cd - self.b * rear.force) / self.i_z,
            u.a_x + x.v_y * x.r,
            x.r - along / dist,
            x.v_x * sp + x.v_y * cp,
        ];

        // lateral force partials over (v_y, r, v_x)
        let dff: [f64; 3] = std::array::from_fn(|j| front.d_alpha * slip.dalpha_f[j]);
        let dfr: [f64; 3] = std::array::from_fn(|j| rear.d_alpha * slip.dalpha_r[j]);
        let dff_delta = -front.d_alpha;
        let dff_ax = front.d_limit * loads.dmu_f * loads.f_zf;
        let dfr_ax = rear.d_limit * loads.dmu_r * loads.f_zr;

        let mut fx = [[0.0; STATE_DIM]; STATE_DIM];
        let mut fu = [[0.0; CONTROL_DIM]; STATE_DIM];
        for j in 0..3 {
            fx[0][j] = (cd * dff[j] + dfr[j]) / self.m;
            fx[1][j] = (self.a * cd * dff[j] - self.b * dfr[j]) / self.i_z;
        }
        fx[0][1] -= x.v_x;
        fx[0][2] -= x.r;
        fu[0][0] = (cd * dff_delta - sd * front.force) / self.m;
        fu[0][1] = (cd * dff_ax + dfr_ax) / self.m;
        fu[1][0] = self.a * (cd * dff_delta - sd * front.force) / self.i_z;
        fu[1][1] = (self.a * cd * dff_ax - self.b * dfr_ax) / self.i_z;

        fx[2][0] = x.r;
        fx[2][1] = x.v_y;
        fu[2][1] = 1.0;

        fx[3][0] = sp / dist;
        fx[3][1] = 1.0;
        fx[3][2] = -cp / dist;
        fx[3][3] = (x.v_x * sp + x.v_y * cp) / dist;
        fx[3][4] = -along / (dist * dist);

        fx[4][0] = cp;
        fx[4][2] = sp;
        fx[4][3] = x.v_x * cp - x.v_y * sp;

        Ok((f, fx, fu))
    }

    /// One control period of explicit Euler substeps with zero-order hold.
    pub fn step(&self, x: &VehicleState, u: &VehicleControl) -> Result<VehicleState, ModelError> {
        let h = 1.0 / self.f_sim;
        let mut s = *x;
        for _ in 0..self.substeps() {
            let d = self.vehicle_derivative(&s, u)?;
            s = VehicleState {
                v_y: s.v_y + h * d[0],
                r: s.r + h * d[1],
                v_x: s.v_x + h * d[2],
                phi: s.phi + h * d[3],
                y: s.y + h * d[4],
            };
        }
        self.check_domain(&s)?;
        Ok(s)
    }

    /// Chain-ruled Jacobians of `step` through every substep.
    pub fn step_jacobians(&self, x: &VehicleState, u: &VehicleControl) -> Result<StepLinearization, ModelError> {
        let h = 1.0 / self.f_sim;
        let mut s = *x;
        let mut jx = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM);
        let mut ju = DMatrix::<f64>::zeros(STATE_DIM, CONTROL_DIM);
        for _ in 0..self.substeps() {
            let (d, fx, fu) = self.derivative_with_partials(&s, u)?;
            let mut m = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM);
            let mut b = DMatrix::<f64>::zeros(STATE_DIM, CONTROL_DIM);
            for i in 0..STATE_DIM {
                for j in 0..STATE_DIM {
                    m[(i, j)] += h * fx[i][j];
                }
                for j in 0..CONTROL_DIM {
                    b[(i, j)] = h * fu[i][j];
                }
            }
            ju = &m * ju + b;
            jx = &m * jx;
            s = VehicleState {
                v_y: s.v_y + h * d[0],
                r: s.r + h * d[1],
                v_x: s.v_x + h * d[2],
                phi: s.phi + h * d[3],
                y: s.y + h * d[4],
            };
        }
        self.check_domain(&s)?;
        Ok(StepLinearization {
            next: s.to_vec(),
            dx: jx,
            du: ju,
        })
    }

    /// Stability constraints `|r v_x / mu_r| <= g`, `|alpha_f / mu_f| <= 3F_zf/C_f`,
    /// `|alpha_r / mu_r| <= 3F_zr/C_r` at `x`, with `u` the control that produced it.
    pub fn constraint_values(&self, x: &VehicleState, u: &VehicleControl) -> Result<[ConstraintEval; 3], ModelError> {
        let loads = self.tire_loads_and_friction(u)?;
        let slip = self.slip_angles(x, u)?;
        let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };

        let yaw_raw = x.r * x.v_x / loads.mu_r;
        let s = sign(yaw_raw);
        let yaw = ConstraintEval {
            value: yaw_raw.abs(),
            bound: self.g,
            dx: vec![0.0, s * x.v_x / loads.mu_r, s * x.r / loads.mu_r, 0.0, 0.0],
            du: vec![0.0, -s * yaw_raw / loads.mu_r * loads.dmu_r],
        };

        let front_raw = slip.alpha_f / loads.mu_f;
        let s = sign(front_raw);
        let front = ConstraintEval {
            value: front_raw.abs(),
            bound: 3.0 * loads.f_zf / self.c_f,
            dx: vec![
                s * slip.dalpha_f[0] / loads.mu_f,
                s * slip.dalpha_f[1] / loads.mu_f,
                s * slip.dalpha_f[2] / loads.mu_f,
                0.0,
                0.0,
            ],
            du: vec![-s / loads.mu_f, -s * front_raw / loads.mu_f * loads.dmu_f],
        };

        let rear_raw = slip.alpha_r / loads.mu_r;
        let s = sign(rear_raw);
        let rear = ConstraintEval {
            value: rear_raw.abs(),
            bound: 3.0 * loads.f_zr / self.c_r,
            dx: vec![
                s * slip.dalpha_r[0] / loads.mu_r,
                s * slip.dalpha_r[1] / loads.mu_r,
                s * slip.dalpha_r[2] / loads.mu_r,
                0.0,
                0.0,
            ],
            du: vec![0.0, -s * rear_raw / loads.mu_r * loads.dmu_r],
        };
        Ok([yaw, front, rear])
    }
}

/// Slip angle magnitude where the Fiala cubic reaches full sliding.
pub fn fiala_saturation_slip(c: f64, mu_eff: f64, f_z: f64) -> f64 {
    (3.0 * mu_eff * f_z / c).atan()
}

/// Fiala lateral tire force.
///
/// With `t = tan(alpha)` and `q = C / (3 mu_eff F_z)` the unsaturated branch is
/// `-C t (q² t²/3 - q|t| + 1)`; past `|tan alpha| = 1/q` the force saturates at
/// `-mu_eff F_z sign(alpha)`, which keeps the law odd and continuous.
pub fn fiala_lateral_force(alpha: f64, c: f64, mu_eff: f64, f_z: f64) -> FialaForce {
    let limit = mu_eff * f_z;
    let sign = if alpha > 0.0 {
        1.0
    } else if alpha < 0.0 {
        -1.0
    } else {
        0.0
    };
    if limit <= 0.0 {
        return FialaForce {
            force: 0.0,
            d_alpha: 0.0,
            d_limit: -sign,
            saturated: true,
        };
    }
    if alpha.abs() > fiala_saturation_slip(c, mu_eff, f_z) {
        return FialaForce {
            force: -limit * sign,
            d_alpha: 0.0,
            d_limit: -sign,
            saturated: true,
        };
    }
    let t = alpha.tan();
    let q = c / (3.0 * limit);
    let at = t.abs();
    let force = -c * t * (q * q * t * t / 3.0 - q * at + 1.0);
    let one_minus = 1.0 - q * at;
    let d_alpha = -c * one_minus * one_minus * (1.0 + t * t);
    // ∂F/∂q = -C (2q t³/3 - t|t|), ∂q/∂limit = -q/limit
    let d_limit = c * (2.0 * q * t * t * t / 3.0 - t * at) * q / limit;
    FialaForce {
        force,
        d_alpha,
        d_limit,
        saturated: false,
    }
}

/// Quadratic tracking utility rewarding speed.
pub fn vehicle_utility(x: &[f64], u: &[f64]) -> UtilityEval {
    let (v_x, y) = (x[2], x[4]);
    let (delta, a_x) = (u[0], u[1]);
    UtilityEval {
        value: -0.015 * v_x + 0.04 * y * y + 0.1 * delta * delta + 0.00012 * a_x * a_x,
        dx: vec![0.0, 0.0, -0.015, 0.0, 0.08 * y],
        du: vec![0.2 * delta, 0.00024 * a_x],
    }
}

/// The path-tracking system behind the uniform model interface.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleModel {
    pub params: VehicleParams,
}

impl VehicleModel {
    pub fn new(params: VehicleParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl SystemModel for VehicleModel {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn control_dim(&self) -> usize {
        CONTROL_DIM
    }

    fn state_names(&self) -> Vec<String> {
        ["v_y", "r", "v_x", "phi", "y"].iter().map(|s| s.to_string()).collect()
    }

    fn control_names(&self) -> Vec<String> {
        vec!["delta".into(), "a_x".into()]
    }

    fn constraint_names(&self) -> Vec<String> {
        vec!["yaw_rate".into(), "front_slip".into(), "rear_slip".into()]
    }

    fn check_state(&self, x: &[f64]) -> Result<(), ModelError> {
        check_len("state", x, STATE_DIM)?;
        self.params.check_domain(&VehicleState::from_slice(x))
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_len("state", x, STATE_DIM)?;
        check_len("control", u, CONTROL_DIM)?;
        Ok(self
            .params
            .step(&VehicleState::from_slice(x), &VehicleControl::from_slice(u))?
            .to_vec())
    }

    fn linearize(&self, x: &[f64], u: &[f64]) -> Result<StepLinearization, ModelError> {
        check_len("state", x, STATE_DIM)?;
        check_len("control", u, CONTROL_DIM)?;
        self.params
            .step_jacobians(&VehicleState::from_slice(x), &VehicleControl::from_slice(u))
    }

    fn utility(&self, x: &[f64], u: &[f64]) -> UtilityEval {
        vehicle_utility(x, u)
    }

    fn constraints(&self, x: &[f64], u_prev: &[f64]) -> Result<Vec<ConstraintEval>, ModelError> {
        check_len("state", x, STATE_DIM)?;
        check_len("control", u_prev, CONTROL_DIM)?;
        Ok(self
            .params
            .constraint_values(&VehicleState::from_slice(x), &VehicleControl::from_slice(u_prev))?
            .to_vec())
    }
}
