use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mdp::{feasible_set, FiniteMdp, TabularError};
use super::pi::{
    backup, brute_force_optimal, constrained_improvement, constrained_policy_iteration, evaluate_exact, feasible_initial_policy,
};

/// Slack on the per-sweep contraction ratio.
pub const CONTRACTION_TOL: f64 = 1e-12;
/// Allowed pointwise increase between consecutive policies.
pub const MONOTONE_TOL: f64 = 1e-12;
/// Allowed gap to the enumerated optimum.
pub const OPTIMALITY_TOL: f64 = 1e-8;
/// Action radius for the local fixed-point check.
pub const LOCAL_DELTA_ACTION: f64 = 1.0;

/// Sweeps stop once the error falls below this, where roundoff dominates the ratio.
const SWEEP_FLOOR: f64 = 1e-6;
const MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub pass: bool,
    /// Worst observed quantity.
    pub worst: f64,
    /// Limit `worst` is compared against.
    pub limit: f64,
    /// Where the worst value occurred, when it is localized.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at: Option<String>,
}

impl Check {
    fn new(worst: f64, limit: f64, at: Option<String>) -> Self {
        Self {
            pass: worst <= limit,
            worst,
            limit,
            at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpReport {
    pub index: usize,
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub feasible_states: usize,
    /// Ratio `‖V_{i+1} − V^π‖∞ / ‖V_i − V^π‖∞` against `γ^N`.
    pub contraction: Check,
    /// Largest `V^{π_{K+1}}(s) − V^{π_K}(s)` over feasible states.
    pub monotonicity: Check,
    /// Largest gap to the enumerated optimum over feasible states.
    pub optimality: Check,
    /// With a finite action radius, the final policy must be unchanged by one more improvement.
    pub local_fixed_point: Check,
    pub iterations: usize,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The offending MDP, attached on failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<FiniteMdp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: Option<u64>,
    pub mdps: usize,
    pub failures: usize,
    pub pass: bool,
    pub reports: Vec<MdpReport>,
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn contraction_check<R: Rng>(mdp: &FiniteMdp, rng: &mut R) -> Result<Check, TabularError> {
    let psi = feasible_set(mdp)?;
    let policy = feasible_initial_policy(mdp, &psi);
    let fixed = evaluate_exact(mdp, &policy)?;
    let limit = mdp.gamma.powi(mdp.horizon as i32) + CONTRACTION_TOL;
    let mut v: Vec<f64> = fixed.iter().map(|x| x + rng.gen_range(-10.0..10.0)).collect();
    let mut worst = 0.0f64;
    let mut at = None;
    let mut err = sup_diff(&v, &fixed);
    for sweep in 0..MAX_SWEEPS {
        if err < SWEEP_FLOOR {
            break;
        }
        v = backup(mdp, &policy, &v);
        let next = sup_diff(&v, &fixed);
        let ratio = next / err;
        if ratio > worst {
            worst = ratio;
            at = Some(format!("sweep {sweep}"));
        }
        err = next;
    }
    Ok(Check::new(worst, limit, at))
}

fn verify_inner<R: Rng>(mdp: &FiniteMdp, index: usize, rng: &mut R) -> Result<MdpReport, TabularError> {
    mdp.validate()?;
    let psi = feasible_set(mdp)?;
    let contraction = contraction_check(mdp, rng)?;

    let start = feasible_initial_policy(mdp, &psi);
    let run = constrained_policy_iteration(mdp, &start, f64::INFINITY)?;
    let mut rise = f64::NEG_INFINITY;
    let mut rise_at = None;
    for (k, pair) in run.values.windows(2).enumerate() {
        for s in psi.states() {
            let d = pair[1][s] - pair[0][s];
            if d > rise {
                rise = d;
                rise_at = Some(format!("improvement {k}, state {s}"));
            }
        }
    }
    if run.values.len() < 2 {
        rise = 0.0;
    }
    let monotonicity = Check::new(rise, MONOTONE_TOL, rise_at);

    let bf = brute_force_optimal(mdp)?;
    let mut gap = 0.0f64;
    let mut gap_at = None;
    for s in psi.states() {
        let d = (run.value[s] - bf.value[s]).abs();
        if !(d <= gap) {
            gap = d;
            gap_at = Some(format!("state {s}"));
        }
    }
    let optimality = Check::new(gap, OPTIMALITY_TOL, gap_at);

    let local = constrained_policy_iteration(mdp, &start, LOCAL_DELTA_ACTION)?;
    let again = constrained_improvement(mdp, &psi, &local.policy, &local.value, LOCAL_DELTA_ACTION)?;
    let changed = again.iter().zip(&local.policy).filter(|(a, b)| a != b).count();
    let mut local_rise = 0.0f64;
    for pair in local.values.windows(2) {
        for s in psi.states() {
            local_rise = local_rise.max(pair[1][s] - pair[0][s]);
        }
    }
    let local_fixed_point = Check::new(
        if changed == 0 && local_rise <= MONOTONE_TOL { 0.0 } else { changed as f64 + local_rise.max(0.0) },
        0.0,
        None,
    );

    let pass = contraction.pass && monotonicity.pass && optimality.pass && local_fixed_point.pass;
    Ok(MdpReport {
        index,
        states: mdp.state_count(),
        actions: mdp.action_count(),
        horizon: mdp.horizon,
        gamma: mdp.gamma,
        feasible_states: psi.len(),
        contraction,
        monotonicity,
        optimality,
        local_fixed_point,
        iterations: run.iterations,
        pass,
        error: None,
        witness: if pass { None } else { Some(mdp.clone()) },
    })
}

/// Runs every check on one MDP; errors are folded into a failing report.
pub fn verify_mdp<R: Rng>(mdp: &FiniteMdp, index: usize, rng: &mut R) -> MdpReport {
    verify_inner(mdp, index, rng).unwrap_or_else(|e| {
        let nan = Check::new(f64::NAN, 0.0, None);
        MdpReport {
            index,
            states: mdp.state_count(),
            actions: mdp.action_count(),
            horizon: mdp.horizon,
            gamma: mdp.gamma,
            feasible_states: 0,
            contraction: nan.clone(),
            monotonicity: nan.clone(),
            optimality: nan.clone(),
            local_fixed_point: nan,
            iterations: 0,
            pass: false,
            error: Some(e.to_string()),
            witness: Some(mdp.clone()),
        }
    })
}

fn collect(seed: Option<u64>, reports: Vec<MdpReport>) -> VerificationReport {
    let failures = reports.iter().filter(|r| !r.pass).count();
    VerificationReport {
        seed,
        mdps: reports.len(),
        failures,
        pass: failures == 0,
        reports,
    }
}

/// Verifies `count` random MDPs with at most 6 states and 4 actions.
pub fn verify_random(count: usize, seed: u64) -> VerificationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports = (0..count)
        .map(|i| {
            let mdp = FiniteMdp::random(&mut rng, 6, 4);
            verify_mdp(&mdp, i, &mut rng)
        })
        .collect();
    collect(Some(seed), reports)
}

/// Verifies a single given MDP.
pub fn verify_one(mdp: &FiniteMdp, seed: u64) -> VerificationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    collect(Some(seed), vec![verify_mdp(mdp, 0, &mut rng)])
}
