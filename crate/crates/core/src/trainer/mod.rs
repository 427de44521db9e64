//! The outer training loop: a pool of agents rolls out the current policy,
//! the critic regresses onto the return targets, and the actor takes a
//! constrained trust-region step (or a baseline step).

mod config;
mod engine;
mod evaluate;
mod pool;
mod run;

pub use config::{
    Algorithm, EvalConfig, ExperimentConfig, LtiConfig, MetricSolver, ModelKind, NetworkConfig, PoolConfig, TrainConfig,
};
pub use engine::{IterationDiagnostics, IterationOutput, MetricsRow, SampledRecord, Trainer};
pub use evaluate::{evaluate, EvalFailure, Evaluation};
pub use pool::{in_box, sample_omega, Agent, AgentPool};
pub use run::{policy_checkpoint_path, train, ArtifactOptions, TrainOutcome};

use crate::critic::CriticError;
use crate::dynamics::{CsvError, ModelError};
use crate::netcore::NetError;
use crate::rollout::RolloutError;
use crate::trsolver::TrError;

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not sample a valid state in {attempts} attempts")]
    Sampler { attempts: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Step(#[from] TrError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
