use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::SystemModel;
use crate::netcore::{NetworkSpec, ParamVector};

use super::TrainerError;

pub fn in_box(x: &[f64], region: &[[f64; 2]]) -> bool {
    x.len() == region.len() && x.iter().zip(region).all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
}

/// Uniform draw from the `omega` box, rejected until the model accepts it.
pub fn sample_omega<R: Rng>(
    model: &dyn SystemModel,
    omega: &[[f64; 2]],
    rng: &mut R,
    max_attempts: usize,
) -> Result<Vec<f64>, TrainerError> {
    for _ in 0..max_attempts.max(1) {
        let x: Vec<f64> = omega
            .iter()
            .map(|&[lo, hi]| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
            .collect();
        if model.check_state(&x).is_ok() {
            return Ok(x);
        }
    }
    Err(TrainerError::Sampler { attempts: max_attempts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub state: Vec<f64>,
    /// Advances since the last reset.
    pub age: usize,
    pub resets: usize,
}

/// Current observation states of the parallel agents.
#[derive(Debug, Clone)]
pub struct AgentPool {
    agents: Vec<Agent>,
    omega: Vec<[f64; 2]>,
    keep: Vec<[f64; 2]>,
    max_episode_steps: usize,
    max_resample: usize,
    rng: ChaCha8Rng,
}

impl AgentPool {
    /// Draws `count` states from `omega`. Initial ages are spread uniformly over
    /// the episode length so resets do not happen in lockstep.
    pub fn new(
        model: &dyn SystemModel,
        omega: Vec<[f64; 2]>,
        keep: Vec<[f64; 2]>,
        count: usize,
        max_episode_steps: usize,
        max_resample: usize,
        mut rng: ChaCha8Rng,
    ) -> Result<Self, TrainerError> {
        let mut agents = Vec::with_capacity(count);
        for _ in 0..count {
            let state = sample_omega(model, &omega, &mut rng, max_resample)?;
            let age = if max_episode_steps > 0 { rng.gen_range(0..max_episode_steps) } else { 0 };
            agents.push(Agent { state, age, resets: 0 });
        }
        Ok(Self {
            agents,
            omega,
            keep,
            max_episode_steps,
            max_resample,
            rng,
        })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(|a| a.state.clone()).collect()
    }

    pub fn reset(&mut self, model: &dyn SystemModel, i: usize) -> Result<(), TrainerError> {
        let state = sample_omega(model, &self.omega, &mut self.rng, self.max_resample)?;
        let agent = &mut self.agents[i];
        agent.state = state;
        agent.age = 0;
        agent.resets += 1;
        Ok(())
    }

    /// One control step per agent under the current policy. Agents flagged in
    /// `failed`, leaving the keep region, hitting a model error or reaching the
    /// episode limit are reset. Returns the number of resets.
    pub fn advance(
        &mut self,
        model: &dyn SystemModel,
        policy: &NetworkSpec,
        theta: &ParamVector,
        failed: &[bool],
    ) -> Result<usize, TrainerError> {
        let mut resets = 0;
        for i in 0..self.agents.len() {
            let mut reset = failed.get(i).copied().unwrap_or(false);
            if !reset {
                let u = policy.forward(theta, &self.agents[i].state)?;
                match model.step(&self.agents[i].state, &u) {
                    Ok(next) if model.check_state(&next).is_ok() && in_box(&next, &self.keep) => {
                        let agent = &mut self.agents[i];
                        agent.state = next;
                        agent.age += 1;
                        reset = self.max_episode_steps > 0 && agent.age >= self.max_episode_steps;
                    }
                    _ => reset = true,
                }
            }
            if reset {
                self.reset(model, i)?;
                resets += 1;
            }
        }
        Ok(resets)
    }
}
