//! System models: the vehicle path-tracking benchmark and a linear oracle system.

mod csv;
mod lti;
mod model;
mod vehicle;

pub use self::csv::{trajectory_header, write_trajectory_csv, CsvError};
pub use lti::{discrete_lqr, LtiModel};
pub use model::{ConstraintEval, ModelError, StepLinearization, SystemModel, UtilityEval};
pub use vehicle::{
    fiala_lateral_force, fiala_saturation_slip, vehicle_utility, FialaForce, SlipAngles, TireLoads, VehicleControl,
    VehicleModel, VehicleParams, VehicleState, CONTROL_DIM, CONTROL_LIMITS, STATE_DIM,
};

