//! Constrained deep adaptive dynamic programming.
//!
//! Neural policies for known discrete-time nonlinear systems are trained
//! under hard state constraints. Each policy update linearizes the
//! constrained objective around the current parameters and solves the
//! resulting trust-region QCQP through its low-dimensional dual, with a
//! feasibility test and penalty recovery when the linearized problem has
//! no solution inside the trust region.

pub mod netcore;
pub mod dynamics;
pub mod rollout;
pub mod critic;
pub mod trsolver;
pub mod tabular;
pub mod trainer;
