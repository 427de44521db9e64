use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{critic_update, CriticBatch};
use crate::dynamics::SystemModel;
use crate::netcore::{AdamState, NetworkSpec, ParamVector};
use crate::rollout::{actor_gradient, constraint_gradient, constraint_values, return_target, rollout, ConstraintRecord, Discount, RolloutError, Trajectory};
use crate::trsolver::{
    fixed_penalty_step, normalize, policy_step, unconstrained_step, CgSettings, DualSettings, GaussNewtonMetric,
    JacobianMetric, LinearizedStep, MetricOperator, RawConstraint, StepDiagnostics, TrError,
};

use super::config::{Algorithm, ExperimentConfig, MetricSolver, ModelKind};
use super::evaluate::{evaluate, Evaluation};
use super::pool::{sample_omega, AgentPool};
use super::TrainerError;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    #[serde(rename = "mean_G")]
    pub mean_g: f64,
    /// Undiscounted evaluation cost, when evaluated this iteration.
    pub eval_cost: Option<f64>,
    /// Per-constraint maximum excess of the evaluation run.
    pub excess: Option<Vec<f64>>,
    pub branch: String,
    pub wall_ms: u64,
}

/// A constraint record chosen for the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledRecord {
    pub agent: usize,
    pub step: usize,
    pub id: usize,
    pub value: f64,
    pub bound: f64,
    /// Normalized slack; absent when the gradient was degenerate.
    pub z: Option<f64>,
}

/// One line of `diagnostics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iter: usize,
    pub algorithm: Algorithm,
    pub branch: String,
    pub step: Option<StepDiagnostics>,
    pub critic_loss: f64,
    pub valid_agents: usize,
    pub failed_rollouts: usize,
    pub resets: usize,
    pub objective_grad_norm: f64,
    pub step_norm: f64,
    pub buffer_size: usize,
    pub buffer_violations: usize,
    pub sampled: Vec<SampledRecord>,
    pub eval_failure_step: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub row: MetricsRow,
    pub diagnostics: IterationDiagnostics,
    pub evaluation: Option<Evaluation>,
}

struct StepResult {
    branch: String,
    delta_theta: Option<Vec<f64>>,
    diagnostics: Option<StepDiagnostics>,
    sampled: Vec<SampledRecord>,
}

/// Networks, optimizer state and agent pool of a training run.
pub struct Trainer {
    config: ExperimentConfig,
    model: Box<dyn SystemModel>,
    policy: NetworkSpec,
    value: NetworkSpec,
    theta: ParamVector,
    w: ParamVector,
    adam: AdamState,
    pool: AgentPool,
    sampler: ChaCha8Rng,
    eval_x0: Vec<f64>,
    iteration: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self, TrainerError> {
        config.validate()?;
        let model = config.build_model()?;
        let policy = config.policy_spec();
        let value = config.value_spec();
        let mut init = stream(config.train.seed, 0);
        let mut theta = policy.init_params(&mut init);
        let last = theta.layout().shapes().len() - 1;
        let (ow, ob) = theta.layer_mut(last);
        for v in ow.iter_mut().chain(ob.iter_mut()) {
            *v *= config.network.policy_output_init_scale;
        }
        let w = value.init_params(&mut init);
        let adam = AdamState::new(w.len(), config.train.critic_lr);
        let pool = AgentPool::new(
            model.as_ref(),
            config.omega(),
            config.keep_region(),
            config.train.agent_count,
            config.pool.max_episode_steps,
            config.pool.max_resample,
            stream(config.train.seed, 1),
        )?;
        let mut eval_rng = ChaCha8Rng::seed_from_u64(config.eval.seed);
        let eval_x0 = sample_omega(model.as_ref(), &config.omega(), &mut eval_rng, config.pool.max_resample)?;
        Ok(Self {
            sampler: stream(config.train.seed, 2),
            config,
            model,
            policy,
            value,
            theta,
            w,
            adam,
            pool,
            eval_x0,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &dyn SystemModel {
        self.model.as_ref()
    }

    pub fn policy(&self) -> (&NetworkSpec, &ParamVector) {
        (&self.policy, &self.theta)
    }

    pub fn value(&self) -> (&NetworkSpec, &ParamVector) {
        (&self.value, &self.w)
    }

    pub fn set_policy_params(&mut self, theta: ParamVector) -> Result<(), TrainerError> {
        self.policy.check_params(&theta)?;
        self.theta = theta;
        Ok(())
    }

    pub fn set_value_params(&mut self, w: ParamVector) -> Result<(), TrainerError> {
        self.value.check_params(&w)?;
        self.w = w;
        Ok(())
    }

    pub fn pool(&self) -> &AgentPool {
        &self.pool
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn eval_start(&self) -> &[f64] {
        &self.eval_x0
    }

    /// Seconds per control step.
    pub fn control_period(&self) -> f64 {
        match self.config.model {
            ModelKind::Vehicle => 1.0 / self.config.vehicle.f_sample,
            ModelKind::Lti => self.config.lti.dt,
        }
    }

    /// Closed-loop run of the current policy from the fixed evaluation state.
    pub fn evaluate(&self, steps: usize) -> Result<Evaluation, TrainerError> {
        evaluate(self.model.as_ref(), &self.policy, &self.theta, &self.eval_x0, steps)
    }

    fn discount(&self) -> Discount {
        Discount {
            gamma: self.config.train.gamma,
            terminal: self.config.train.terminal_discount,
        }
    }

    fn metric<'a>(&'a self, states: &'a [Vec<f64>]) -> Result<Box<dyn MetricOperator + 'a>, TrainerError> {
        let damping = self.config.train.metric_damping;
        Ok(match self.config.train.metric {
            MetricSolver::Woodbury => Box::new(JacobianMetric::from_policy(&self.policy, &self.theta, states, damping)?),
            MetricSolver::Cg => Box::new(GaussNewtonMetric {
                spec: &self.policy,
                params: &self.theta,
                states,
                damping,
                cg: CgSettings {
                    tol: self.config.train.cg_tol,
                    max_iters: self.config.train.cg_max_iters,
                },
            }),
        })
    }

    /// Picks up to `M` records without replacement, violated ones first when prioritized.
    fn sample_records(&mut self, buffer: &[(usize, ConstraintRecord)]) -> Vec<usize> {
        let m = self.config.train.constraint_samples.min(buffer.len());
        if m == 0 {
            return Vec::new();
        }
        if !self.config.train.prioritize_violated {
            return rand::seq::index::sample(&mut self.sampler, buffer.len(), m).into_vec();
        }
        let (mut hot, mut cold): (Vec<usize>, Vec<usize>) = (0..buffer.len()).partition(|&i| !buffer[i].1.eval.satisfied());
        hot.shuffle(&mut self.sampler);
        cold.shuffle(&mut self.sampler);
        hot.into_iter().chain(cold).take(m).collect()
    }

    fn actor_step(
        &mut self,
        dj: &ParamVector,
        trajs: &[Option<Trajectory>],
        buffer: &[(usize, ConstraintRecord)],
        states: &[Vec<f64>],
    ) -> Result<StepResult, TrainerError> {
        let cfg = self.config.train.clone();
        if cfg.algorithm == Algorithm::Gpi {
            let step: Vec<f64> = dj.values().iter().map(|g| -cfg.gpi_actor_lr * g).collect();
            return Ok(StepResult {
                branch: "gradient".into(),
                delta_theta: Some(step),
                diagnostics: None,
                sampled: Vec::new(),
            });
        }
        let chosen = if cfg.algorithm == Algorithm::Tradp { Vec::new() } else { self.sample_records(buffer) };
        let mut raw = Vec::with_capacity(chosen.len());
        for &k in &chosen {
            let (agent, rec) = &buffer[k];
            let traj = trajs[*agent].as_ref().expect("buffer only holds valid agents");
            let gradient = constraint_gradient(traj, &self.policy, &self.theta, rec)?;
            raw.push(RawConstraint {
                value: rec.eval.value,
                bound: rec.eval.bound,
                gradient: gradient.into_values(),
            });
        }
        let normalized = match normalize(dj.values(), &raw) {
            Ok(n) => n,
            Err(TrError::DegenerateObjective { .. }) => {
                return Ok(StepResult {
                    branch: "skipped".into(),
                    delta_theta: None,
                    diagnostics: None,
                    sampled: Vec::new(),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let mut sampled: Vec<SampledRecord> = chosen
            .iter()
            .map(|&k| {
                let (agent, rec) = &buffer[k];
                SampledRecord {
                    agent: *agent,
                    step: rec.step,
                    id: rec.id,
                    value: rec.eval.value,
                    bound: rec.eval.bound,
                    z: None,
                }
            })
            .collect();
        for (j, &i) in normalized.kept.iter().enumerate() {
            sampled[i].z = Some(normalized.z[j]);
        }
        let metric = self.metric(states)?;
        let step = LinearizedStep::from_normalized(&normalized, metric.as_ref(), cfg.delta_a, cfg.delta_b);
        let outcome = match cfg.algorithm {
            Algorithm::Tradp => unconstrained_step(&normalized.g, metric.as_ref(), cfg.delta_a)?,
            Algorithm::Ptradp => fixed_penalty_step(&step, cfg.eta, cfg.delta_b)?,
            _ => policy_step(&step, cfg.eta, DualSettings::default())?,
        };
        Ok(StepResult {
            branch: outcome.branch.as_str().into(),
            delta_theta: Some(outcome.delta_theta),
            diagnostics: Some(outcome.diagnostics),
            sampled,
        })
    }

    /// Rollouts, critic update, actor step, pool advance and optional evaluation.
    pub fn iterate(&mut self) -> Result<IterationOutput, TrainerError> {
        let started = Instant::now();
        let horizon = self.config.train.horizon;
        let discount = self.discount();
        let pool_states = self.pool.states();

        let mut trajs: Vec<Option<Trajectory>> = Vec::with_capacity(pool_states.len());
        for x in &pool_states {
            match rollout(self.model.as_ref(), &self.policy, &self.theta, x, horizon) {
                Ok(t) => trajs.push(Some(t)),
                Err(RolloutError::Model { .. }) => trajs.push(None),
                Err(e) => return Err(e.into()),
            }
        }
        let failed: Vec<bool> = trajs.iter().map(Option::is_none).collect();
        let valid: Vec<usize> = (0..trajs.len()).filter(|&i| trajs[i].is_some()).collect();
        let states: Vec<Vec<f64>> = valid.iter().map(|&i| pool_states[i].clone()).collect();

        let mut result = StepResult {
            branch: "skipped".into(),
            delta_theta: None,
            diagnostics: None,
            sampled: Vec::new(),
        };
        let (mut mean_g, mut critic_loss, mut grad_norm) = (f64::NAN, f64::NAN, 0.0);
        let mut buffer = Vec::new();
        if !valid.is_empty() {
            let mut targets = Vec::with_capacity(valid.len());
            for &i in &valid {
                targets.push(return_target(trajs[i].as_ref().unwrap(), &self.value, &self.w, discount)?);
            }
            mean_g = targets.iter().sum::<f64>() / targets.len() as f64;
            let batch = CriticBatch::new(states.clone(), targets)?;
            critic_loss = critic_update(&batch, &self.value, &mut self.w, &mut self.adam, self.config.train.critic_epochs)?;

            let mut dj = self.theta.zeros_like();
            let inv = 1.0 / valid.len() as f64;
            for &i in &valid {
                let g = actor_gradient(trajs[i].as_ref().unwrap(), &self.policy, &self.theta, &self.value, &self.w, discount)?;
                dj.axpy(inv, &g);
            }
            grad_norm = dj.norm();

            if matches!(self.config.train.algorithm, Algorithm::Cdadp | Algorithm::Ptradp) {
                for &i in &valid {
                    for rec in constraint_values(self.model.as_ref(), trajs[i].as_ref().unwrap())? {
                        buffer.push((i, rec));
                    }
                }
            }
            result = self.actor_step(&dj, &trajs, &buffer, &states)?;
        }

        let mut step_norm = 0.0;
        if let Some(dt) = &result.delta_theta {
            step_norm = dt.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (p, d) in self.theta.values_mut().iter_mut().zip(dt) {
                *p += d;
            }
        }
        let resets = self.pool.advance(self.model.as_ref(), &self.policy, &self.theta, &failed)?;

        let iter = self.iteration;
        self.iteration += 1;
        let every = self.config.train.eval_every;
        let evaluation = if every > 0 && (iter + 1) % every == 0 {
            Some(self.evaluate(self.config.eval.steps)?)
        } else {
            None
        };
        let wall_ms = if self.config.train.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let row = MetricsRow {
            iter,
            mean_g,
            eval_cost: evaluation.as_ref().map(|e| e.cost),
            excess: evaluation.as_ref().map(|e| e.max_excess.clone()),
            branch: result.branch.clone(),
            wall_ms,
        };
        let diagnostics = IterationDiagnostics {
            iter,
            algorithm: self.config.train.algorithm,
            branch: result.branch,
            step: result.diagnostics,
            critic_loss,
            valid_agents: valid.len(),
            failed_rollouts: failed.iter().filter(|&&f| f).count(),
            resets,
            objective_grad_norm: grad_norm,
            step_norm,
            buffer_size: buffer.len(),
            buffer_violations: buffer.iter().filter(|(_, r)| !r.eval.satisfied()).count(),
            sampled: result.sampled,
            eval_failure_step: evaluation.as_ref().and_then(|e| e.failure.as_ref().map(|f| f.step)),
        };
        Ok(IterationOutput {
            row,
            diagnostics,
            evaluation,
        })
    }
}
