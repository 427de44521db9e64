use serde::{Deserialize, Serialize};

use crate::dynamics::{LtiModel, SystemModel, VehicleModel, VehicleParams, CONTROL_LIMITS};
use crate::netcore::{Activation, NetworkSpec};
use crate::rollout::TerminalDiscount;

use super::TrainerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Cdadp,
    /// Plain gradient step on the actor.
    Gpi,
    /// Trust-region step with no constraints.
    Tradp,
    /// Fixed-weight penalty step at `δ_b` every iteration.
    Ptradp,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Cdadp => "cdadp",
            Algorithm::Gpi => "gpi",
            Algorithm::Tradp => "tradp",
            Algorithm::Ptradp => "ptradp",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cdadp" => Ok(Algorithm::Cdadp),
            "gpi" => Ok(Algorithm::Gpi),
            "tradp" => Ok(Algorithm::Tradp),
            "ptradp" => Ok(Algorithm::Ptradp),
            other => Err(format!("unknown algorithm `{other}` (expected cdadp, gpi, tradp or ptradp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vehicle,
    Lti,
}

/// How `H⁻¹v` is computed for the trust-region step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSolver {
    /// Exact inverse from explicit policy Jacobians.
    Woodbury,
    /// Matrix-free conjugate gradients.
    Cg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Prediction horizon `N`; rollouts take `N + 1` steps.
    pub horizon: usize,
    /// Constraint records sampled per iteration.
    pub constraint_samples: usize,
    pub gamma: f64,
    pub delta_a: f64,
    pub delta_b: f64,
    /// Recovery weight for CDADP, fixed penalty weight for PTRADP.
    pub eta: f64,
    pub agent_count: usize,
    pub critic_lr: f64,
    pub critic_epochs: usize,
    pub gpi_actor_lr: f64,
    pub iterations: usize,
    pub seed: u64,
    pub metric: MetricSolver,
    pub metric_damping: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub terminal_discount: TerminalDiscount,
    /// Sample violated records first.
    pub prioritize_violated: bool,
    /// Evaluate every this many iterations; 0 disables periodic evaluation.
    pub eval_every: usize,
    /// Checkpoint every this many iterations; the final state is always saved.
    pub checkpoint_every: usize,
    /// Write measured wall time instead of 0, at the cost of byte-reproducible metrics.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Cdadp,
            horizon: 30,
            constraint_samples: 10,
            gamma: 0.98,
            delta_a: 0.003f64.powi(3),
            delta_b: 0.006f64.powi(3),
            eta: 0.8,
            agent_count: 256,
            critic_lr: 8e-4,
            critic_epochs: 1,
            gpi_actor_lr: 2e-4,
            iterations: 2000,
            seed: 0,
            metric: MetricSolver::Woodbury,
            metric_damping: 0.01,
            cg_tol: 1e-10,
            cg_max_iters: 250,
            terminal_discount: TerminalDiscount::PowN,
            prioritize_violated: false,
            eval_every: 1,
            checkpoint_every: 100,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub policy_hidden_layers: usize,
    pub policy_hidden_width: usize,
    pub value_hidden_layers: usize,
    pub value_hidden_width: usize,
    /// Multiplies the policy's output-layer initial weights and biases.
    pub policy_output_init_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            policy_hidden_layers: 5,
            policy_hidden_width: 32,
            value_hidden_layers: 5,
            value_hidden_width: 32,
            policy_output_init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LtiConfig {
    pub dt: f64,
    /// `|position| ≤ bound` when set.
    pub position_bound: Option<f64>,
    /// `|velocity| ≤ bound` when set.
    pub velocity_bound: Option<f64>,
}

impl Default for LtiConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            position_bound: None,
            velocity_bound: None,
        }
    }
}

/// Per-state `[low, high]` boxes for sampling and for keeping agents in play.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    /// Reset distribution; empty means the model default.
    pub omega: Vec<[f64; 2]>,
    /// Agents leaving this box are reset; empty means the model default.
    pub keep: Vec<[f64; 2]>,
    /// Agents are reset after this many advances; 0 disables the limit.
    pub max_episode_steps: usize,
    /// Rejection-sampling attempts per state.
    pub max_resample: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            omega: Vec::new(),
            keep: Vec::new(),
            max_episode_steps: 400,
            max_resample: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Steps for the per-iteration training-curve evaluation.
    pub steps: usize,
    /// Steps for the end-of-run evaluation.
    pub final_steps: usize,
    /// Seed of the fixed evaluation start state, drawn from omega.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            final_steps: 500,
            seed: 2024,
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub vehicle: VehicleParams,
    pub lti: LtiConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub pool: PoolConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Vehicle,
            vehicle: VehicleParams::default(),
            lti: LtiConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            pool: PoolConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

const VEHICLE_OMEGA: [[f64; 2]; 5] = [[-1.0, 1.0], [-0.2, 0.2], [5.0, 15.0], [-0.15, 0.15], [-1.0, 1.0]];
const VEHICLE_KEEP: [[f64; 2]; 5] = [[-3.0, 3.0], [-1.0, 1.0], [1.0, 30.0], [-0.6, 0.6], [-5.0, 5.0]];
const LTI_OMEGA: [[f64; 2]; 2] = [[-1.0, 1.0], [-1.0, 1.0]];
const LTI_KEEP: [[f64; 2]; 2] = [[-5.0, 5.0], [-5.0, 5.0]];

impl ExperimentConfig {
    /// Vehicle task at a scale that fits a laptop: 64 agents.
    pub fn desk_vehicle() -> Self {
        let mut c = Self::default();
        c.train.agent_count = 64;
        c
    }

    /// Unconstrained double integrator with a linear policy.
    pub fn lti_default() -> Self {
        let mut c = Self::default();
        c.model = ModelKind::Lti;
        c.network.policy_hidden_layers = 0;
        c.network.value_hidden_layers = 2;
        c.network.value_hidden_width = 32;
        c.train.agent_count = 64;
        // u = 0 is marginally stable on the double integrator; a random
        // linear gain often is not.
        c.network.policy_output_init_scale = 0.0;
        c.train.delta_a = 3e-5;
        c.train.delta_b = 3e-4;
        c.train.critic_lr = 3e-3;
        c.train.critic_epochs = 5;
        c.train.terminal_discount = TerminalDiscount::PowNPlusOne;
        c.pool.max_episode_steps = 100;
        c
    }

    pub fn build_model(&self) -> Result<Box<dyn SystemModel>, TrainerError> {
        Ok(match self.model {
            ModelKind::Vehicle => Box::new(VehicleModel::new(self.vehicle.clone())?),
            ModelKind::Lti => {
                let base = LtiModel::double_integrator(self.lti.dt);
                Box::new(base.with_state_bounds(vec![self.lti.position_bound, self.lti.velocity_bound])?)
            }
        })
    }

    pub fn policy_spec(&self) -> NetworkSpec {
        let n = &self.network;
        match self.model {
            ModelKind::Vehicle => NetworkSpec::policy(5, n.policy_hidden_layers, n.policy_hidden_width, &CONTROL_LIMITS),
            ModelKind::Lti => NetworkSpec {
                input_dim: 2,
                hidden_layers: n.policy_hidden_layers,
                hidden_width: n.policy_hidden_width,
                hidden_activation: Activation::Elu,
                output_activation: Activation::Linear,
                output_dim: 1,
                output_scale: vec![1.0],
            },
        }
    }

    pub fn value_spec(&self) -> NetworkSpec {
        let dim = match self.model {
            ModelKind::Vehicle => 5,
            ModelKind::Lti => 2,
        };
        NetworkSpec::value(dim, self.network.value_hidden_layers, self.network.value_hidden_width)
    }

    pub fn omega(&self) -> Vec<[f64; 2]> {
        if !self.pool.omega.is_empty() {
            return self.pool.omega.clone();
        }
        match self.model {
            ModelKind::Vehicle => VEHICLE_OMEGA.to_vec(),
            ModelKind::Lti => LTI_OMEGA.to_vec(),
        }
    }

    pub fn keep_region(&self) -> Vec<[f64; 2]> {
        if !self.pool.keep.is_empty() {
            return self.pool.keep.clone();
        }
        match self.model {
            ModelKind::Vehicle => VEHICLE_KEEP.to_vec(),
            ModelKind::Lti => LTI_KEEP.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |msg: String| Err(TrainerError::Config(msg));
        let t = &self.train;
        if !(t.gamma > 0.0 && t.gamma <= 1.0) {
            return bad(format!("train.gamma = {} outside (0, 1]", t.gamma));
        }
        if !(t.delta_a > 0.0 && t.delta_a < t.delta_b) {
            return bad(format!("need 0 < train.delta_a < train.delta_b, got {} and {}", t.delta_a, t.delta_b));
        }
        if !(0.0..=1.0).contains(&t.eta) {
            return bad(format!("train.eta = {} outside [0, 1]", t.eta));
        }
        if t.agent_count == 0 {
            return bad("train.agent_count must be positive".into());
        }
        if !(t.critic_lr > 0.0) || !(t.gpi_actor_lr > 0.0) || !(t.metric_damping > 0.0) {
            return bad("learning rates and train.metric_damping must be positive".into());
        }
        if !self.network.policy_output_init_scale.is_finite() {
            return bad("network.policy_output_init_scale must be finite".into());
        }
        let model = self.build_model()?;
        let dim = model.state_dim();
        for (name, region) in [("pool.omega", self.omega()), ("pool.keep", self.keep_region())] {
            if region.len() != dim {
                return bad(format!("{name} has {} ranges for a {dim}-dimensional state", region.len()));
            }
            if region.iter().any(|[lo, hi]| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
                return bad(format!("{name} has an empty or non-finite range"));
            }
        }
        self.policy_spec().validate()?;
        self.value_spec().validate()?;
        Ok(())
    }
}
