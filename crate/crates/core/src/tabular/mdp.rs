use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rollout::TerminalDiscount;

#[derive(Debug, thiserror::Error)]
pub enum TabularError {
    #[error("invalid MDP: {0}")]
    Invalid(String),
    #[error("no state admits a constraint-satisfying policy")]
    EmptyFeasibleSet,
    #[error("state {state} is feasible but no admissible action exists")]
    NoAdmissibleAction { state: usize },
    #[error("policy takes state {state} outside the feasible set")]
    InfeasiblePolicy { state: usize },
    #[error("policy iteration did not settle within {limit} iterations")]
    NoConvergence { limit: usize },
    #[error("{count} policies exceed the enumeration limit {limit}")]
    SearchSpace { count: f64, limit: usize },
    #[error("evaluation system is singular")]
    Singular,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// `values[s] ≤ bound` must hold at every visited state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConstraint {
    pub values: Vec<f64>,
    pub bound: f64,
}

/// Deterministic finite MDP with an `N`-step backup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteMdp {
    /// `next[s][a]`
    pub next: Vec<Vec<usize>>,
    /// `cost[s][a]`
    pub cost: Vec<Vec<f64>>,
    pub gamma: f64,
    pub horizon: usize,
    #[serde(default)]
    pub constraints: Vec<StateConstraint>,
    #[serde(default = "default_terminal")]
    pub terminal: TerminalDiscount,
}

fn default_terminal() -> TerminalDiscount {
    TerminalDiscount::PowNPlusOne
}

impl FiniteMdp {
    /// Validates the tables and checks that some feasible policy exists.
    pub fn new(
        next: Vec<Vec<usize>>,
        cost: Vec<Vec<f64>>,
        gamma: f64,
        horizon: usize,
        constraints: Vec<StateConstraint>,
    ) -> Result<Self, TabularError> {
        let mdp = Self {
            next,
            cost,
            gamma,
            horizon,
            constraints,
            terminal: default_terminal(),
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn with_terminal(mut self, terminal: TerminalDiscount) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn state_count(&self) -> usize {
        self.next.len()
    }

    pub fn action_count(&self) -> usize {
        self.next.first().map_or(0, Vec::len)
    }

    pub fn terminal_factor(&self) -> f64 {
        self.terminal.factor(self.gamma, self.horizon)
    }

    /// Whether every constraint holds at `s`.
    pub fn safe(&self, s: usize) -> bool {
        self.constraints.iter().all(|c| c.values[s] <= c.bound)
    }

    pub fn validate(&self) -> Result<(), TabularError> {
        let n = self.state_count();
        let a = self.action_count();
        if n == 0 || a == 0 {
            return Err(TabularError::Invalid("need at least one state and one action".into()));
        }
        if self.cost.len() != n {
            return Err(TabularError::Invalid(format!("cost has {} rows for {n} states", self.cost.len())));
        }
        for s in 0..n {
            if self.next[s].len() != a || self.cost[s].len() != a {
                return Err(TabularError::Invalid(format!("state {s} does not list {a} actions")));
            }
            if let Some(t) = self.next[s].iter().find(|&&t| t >= n) {
                return Err(TabularError::Invalid(format!("state {s} transitions to unknown state {t}")));
            }
            if self.cost[s].iter().any(|c| !c.is_finite()) {
                return Err(TabularError::Invalid(format!("state {s} has a non-finite cost")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TabularError::Invalid(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        for (k, c) in self.constraints.iter().enumerate() {
            if c.values.len() != n || c.values.iter().any(|v| !v.is_finite()) || !c.bound.is_finite() {
                return Err(TabularError::Invalid(format!("constraint {k} is malformed")));
            }
        }
        feasible_set(self)?;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, TabularError> {
        let mdp: Self = serde_json::from_str(s)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn load(path: &Path) -> Result<Self, TabularError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("MDP serializes")
    }

    /// Random MDP with `2..=max_states` states and `2..=max_actions` actions.
    ///
    /// Costs are uniform on `[0, 1)`. Up to two constraints are drawn; a draw
    /// with an empty feasible set is discarded and retried.
    pub fn random<R: Rng>(rng: &mut R, max_states: usize, max_actions: usize) -> Self {
        loop {
            let n = rng.gen_range(2..=max_states.max(2));
            let a = rng.gen_range(2..=max_actions.max(2));
            let next = (0..n).map(|_| (0..a).map(|_| rng.gen_range(0..n)).collect()).collect();
            let cost = (0..n).map(|_| (0..a).map(|_| rng.gen::<f64>()).collect()).collect();
            let gamma = rng.gen_range(0.5..0.95);
            let horizon = rng.gen_range(0..=3);
            let constraints = (0..rng.gen_range(0..=2))
                .map(|_| StateConstraint {
                    values: (0..n).map(|_| rng.gen::<f64>()).collect(),
                    bound: rng.gen_range(0.5..0.9),
                })
                .collect();
            if let Ok(mdp) = Self::new(next, cost, gamma, horizon, constraints) {
                return mdp;
            }
        }
    }
}

/// States from which some policy keeps every visited state safe forever.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub member: Vec<bool>,
}

impl FeasibleSet {
    pub fn contains(&self, s: usize) -> bool {
        self.member[s]
    }

    pub fn states(&self) -> Vec<usize> {
        (0..self.member.len()).filter(|&s| self.member[s]).collect()
    }

    pub fn len(&self) -> usize {
        self.member.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Greatest fixed point of `Ψ = {s safe : ∃a, next(s, a) ∈ Ψ}`.
pub fn feasible_set(mdp: &FiniteMdp) -> Result<FeasibleSet, TabularError> {
    let n = mdp.state_count();
    let mut member: Vec<bool> = (0..n).map(|s| mdp.safe(s)).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if member[s] && !mdp.next[s].iter().any(|&t| member[t]) {
                member[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let set = FeasibleSet { member };
    if set.is_empty() {
        return Err(TabularError::EmptyFeasibleSet);
    }
    Ok(set)
}
