use nalgebra::DMatrix;

/// One discrete step together with its first partials.
#[derive(Debug, Clone)]
pub struct StepLinearization {
    pub next: Vec<f64>,
    /// ∂x'/∂x, n×n.
    pub dx: DMatrix<f64>,
    /// ∂x'/∂u, n×m.
    pub du: DMatrix<f64>,
}

/// Utility value and its partials.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityEval {
    pub value: f64,
    pub dx: Vec<f64>,
    pub du: Vec<f64>,
}

/// A state constraint `value <= bound` evaluated at a successor state.
///
/// `du` is the partial with respect to the control held while reaching the
/// state; it is zero for models whose constraints depend on the state only.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub value: f64,
    pub bound: f64,
    pub dx: Vec<f64>,
    pub du: Vec<f64>,
}

impl ConstraintEval {
    pub fn excess(&self) -> f64 {
        self.value - self.bound
    }

    pub fn satisfied(&self) -> bool {
        self.value <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("longitudinal speed {v_x} is not positive")]
    NonPositiveSpeed { v_x: f64 },
    #[error("lateral offset {y} reached the reference radius {radius}")]
    OffTrack { y: f64, radius: f64 },
    #[error("friction circle violated on the {axle} axle")]
    FrictionCircle { axle: &'static str },
    #[error("non-finite state")]
    NonFinite,
    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

/// Known discrete-time system `x' = f(x, u)` with utility and state constraints.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn state_names(&self) -> Vec<String>;
    fn control_names(&self) -> Vec<String>;
    fn constraint_names(&self) -> Vec<String>;

    fn constraint_count(&self) -> usize {
        self.constraint_names().len()
    }

    /// Checks the state lies in the model's domain of definition.
    fn check_state(&self, x: &[f64]) -> Result<(), ModelError>;

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError>;

    fn linearize(&self, x: &[f64], u: &[f64]) -> Result<StepLinearization, ModelError>;

    fn utility(&self, x: &[f64], u: &[f64]) -> UtilityEval;

    /// Constraints at state `x`, reached while `u_prev` was applied.
    fn constraints(&self, x: &[f64], u_prev: &[f64]) -> Result<Vec<ConstraintEval>, ModelError>;
}

pub(crate) fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<(), ModelError> {
    if v.len() != expected {
        return Err(ModelError::Dimension {
            what,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}
