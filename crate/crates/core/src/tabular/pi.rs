use nalgebra::{DMatrix, DVector};

use super::mdp::{feasible_set, FeasibleSet, FiniteMdp, TabularError};

/// Action index per state.
pub type TabularPolicy = Vec<usize>;
/// Value per state.
pub type TabularValue = Vec<f64>;

/// Largest policy space [`brute_force_optimal`] will enumerate.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// Visited states `s_0..=s_{N+1}` and the discounted cost of the first `N + 1`
/// steps, taking `first` at `s_0` and following `policy` afterwards.
fn segment(mdp: &FiniteMdp, policy: &[usize], s: usize, first: usize) -> (Vec<usize>, f64) {
    let mut path = Vec::with_capacity(mdp.horizon + 2);
    path.push(s);
    let mut state = s;
    let mut action = first;
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..=mdp.horizon {
        total += discount * mdp.cost[state][action];
        discount *= mdp.gamma;
        state = mdp.next[state][action];
        path.push(state);
        action = policy[state];
    }
    (path, total)
}

fn check_policy_shape(mdp: &FiniteMdp, policy: &[usize]) -> Result<(), TabularError> {
    if policy.len() != mdp.state_count() || policy.iter().any(|&a| a >= mdp.action_count()) {
        return Err(TabularError::Invalid("policy does not match the MDP".into()));
    }
    Ok(())
}

/// Whether `policy` keeps every state of `psi` inside `psi`.
pub fn is_feasible_policy(mdp: &FiniteMdp, psi: &FeasibleSet, policy: &[usize]) -> bool {
    psi.states().into_iter().all(|s| psi.contains(mdp.next[s][policy[s]]))
}

/// Lowest-index action that stays in `psi`; action 0 outside it.
pub fn feasible_initial_policy(mdp: &FiniteMdp, psi: &FeasibleSet) -> TabularPolicy {
    (0..mdp.state_count())
        .map(|s| {
            if psi.contains(s) {
                (0..mdp.action_count()).find(|&a| psi.contains(mdp.next[s][a])).unwrap_or(0)
            } else {
                0
            }
        })
        .collect()
}

/// One application of the `N`-step backup.
pub fn backup(mdp: &FiniteMdp, policy: &[usize], v: &[f64]) -> TabularValue {
    let f = mdp.terminal_factor();
    (0..mdp.state_count())
        .map(|s| {
            let (path, cost) = segment(mdp, policy, s, policy[s]);
            cost + f * v[*path.last().unwrap()]
        })
        .collect()
}

/// `sweeps` applications of [`backup`] starting from `v0`.
pub fn policy_evaluation(mdp: &FiniteMdp, policy: &[usize], v0: &[f64], sweeps: usize) -> TabularValue {
    let mut v = v0.to_vec();
    for _ in 0..sweeps {
        v = backup(mdp, policy, &v);
    }
    v
}

/// Fixed point of [`backup`], from the linear system `(I − f P) V = c`.
pub fn evaluate_exact(mdp: &FiniteMdp, policy: &[usize]) -> Result<TabularValue, TabularError> {
    check_policy_shape(mdp, policy)?;
    let n = mdp.state_count();
    let f = mdp.terminal_factor();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut c = DVector::<f64>::zeros(n);
    for s in 0..n {
        let (path, cost) = segment(mdp, policy, s, policy[s]);
        a[(s, *path.last().unwrap())] -= f;
        c[s] = cost;
    }
    let v = a.lu().solve(&c).ok_or(TabularError::Singular)?;
    Ok(v.iter().copied().collect())
}

/// Lookahead cost of taking `a` at `s` then following `policy`, or `None` when
/// `a` leaves the feasible set or any of the `N + 1` successors is unsafe.
pub fn lookahead(mdp: &FiniteMdp, psi: &FeasibleSet, policy: &[usize], v: &[f64], s: usize, a: usize) -> Option<f64> {
    if !psi.contains(mdp.next[s][a]) {
        return None;
    }
    let (path, cost) = segment(mdp, policy, s, a);
    if !path[1..].iter().all(|&t| mdp.safe(t)) {
        return None;
    }
    Some(cost + mdp.terminal_factor() * v[*path.last().unwrap()])
}

/// Per feasible state, the lookahead-minimizing admissible action within
/// squared index distance `delta_action` of the current one.
///
/// Ties go to the smallest index. States outside `psi` keep their action.
pub fn constrained_improvement(
    mdp: &FiniteMdp,
    psi: &FeasibleSet,
    policy: &[usize],
    v: &[f64],
    delta_action: f64,
) -> Result<TabularPolicy, TabularError> {
    check_policy_shape(mdp, policy)?;
    let mut out = policy.to_vec();
    for s in psi.states() {
        let mut best: Option<(usize, f64)> = None;
        for a in 0..mdp.action_count() {
            let d = a as f64 - policy[s] as f64;
            if d * d > delta_action {
                continue;
            }
            if let Some(q) = lookahead(mdp, psi, policy, v, s, a) {
                if best.map_or(true, |(_, b)| q < b) {
                    best = Some((a, q));
                }
            }
        }
        out[s] = best.ok_or(TabularError::NoAdmissibleAction { state: s })?.0;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterationResult {
    pub policy: TabularPolicy,
    pub value: TabularValue,
    /// Evaluation-improvement rounds, including the final unchanged one.
    pub iterations: usize,
    /// Exact value of every policy visited, starting with `pi0`.
    pub values: Vec<TabularValue>,
}

fn policy_space_size(mdp: &FiniteMdp) -> usize {
    let n = mdp.state_count() as i32;
    let a = mdp.action_count() as f64;
    let size = a.powi(n);
    if size > usize::MAX as f64 / 2.0 {
        usize::MAX / 2
    } else {
        size as usize
    }
}

/// Exact evaluation alternating with [`constrained_improvement`] until the
/// policy stops changing.
pub fn constrained_policy_iteration(
    mdp: &FiniteMdp,
    pi0: &[usize],
    delta_action: f64,
) -> Result<PolicyIterationResult, TabularError> {
    let psi = feasible_set(mdp)?;
    check_policy_shape(mdp, pi0)?;
    if let Some(s) = psi.states().into_iter().find(|&s| !psi.contains(mdp.next[s][pi0[s]])) {
        return Err(TabularError::InfeasiblePolicy { state: s });
    }
    let limit = policy_space_size(mdp).saturating_add(1);
    let mut policy = pi0.to_vec();
    let mut value = evaluate_exact(mdp, &policy)?;
    let mut values = vec![value.clone()];
    for iterations in 1..=limit {
        let next = constrained_improvement(mdp, &psi, &policy, &value, delta_action)?;
        if next == policy {
            return Ok(PolicyIterationResult {
                policy,
                value,
                iterations,
                values,
            });
        }
        policy = next;
        value = evaluate_exact(mdp, &policy)?;
        values.push(value.clone());
    }
    Err(TabularError::NoConvergence { limit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    /// Feasible policy with the smallest total value over the feasible set.
    pub policy: TabularPolicy,
    /// Pointwise minimum over all feasible policies.
    pub value: TabularValue,
    pub policies_evaluated: usize,
}

/// Exhaustive search over stationary policies that keep the feasible set invariant.
pub fn brute_force_optimal(mdp: &FiniteMdp) -> Result<BruteForceResult, TabularError> {
    let psi = feasible_set(mdp)?;
    let n = mdp.state_count();
    let choices: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            if psi.contains(s) {
                (0..mdp.action_count()).filter(|&a| psi.contains(mdp.next[s][a])).collect()
            } else {
                vec![0]
            }
        })
        .collect();
    let count: f64 = choices.iter().map(|c| c.len() as f64).product();
    if count > ENUMERATION_LIMIT as f64 {
        return Err(TabularError::SearchSpace {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let members = psi.states();
    let mut digits = vec![0usize; n];
    let mut best_value = vec![f64::INFINITY; n];
    let mut best: Option<(f64, TabularPolicy)> = None;
    let mut evaluated = 0;
    loop {
        let policy: TabularPolicy = (0..n).map(|s| choices[s][digits[s]]).collect();
        let v = evaluate_exact(mdp, &policy)?;
        evaluated += 1;
        for &s in &members {
            best_value[s] = best_value[s].min(v[s]);
        }
        let total: f64 = members.iter().map(|&s| v[s]).sum();
        if best.as_ref().map_or(true, |(b, _)| total < *b) {
            best = Some((total, policy));
        }
        let mut k = 0;
        loop {
            if k == n {
                let (_, policy) = best.expect("at least one policy");
                for s in 0..n {
                    if !psi.contains(s) {
                        best_value[s] = f64::NAN;
                    }
                }
                return Ok(BruteForceResult {
                    policy,
                    value: best_value,
                    policies_evaluated: evaluated,
                });
            }
            digits[k] += 1;
            if digits[k] < choices[k].len() {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::mdp::StateConstraint;
    use super::*;
    use crate::rollout::TerminalDiscount;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Chain 0 → 1 → 2 → 3 with 3 absorbing and unsafe; action 0 moves on, action 1 stays.
    fn chain(forced_at_two: bool) -> FiniteMdp {
        let mut next = vec![vec![1, 0], vec![2, 1], vec![3, 2], vec![3, 3]];
        if forced_at_two {
            next[2] = vec![3, 3];
        }
        let cost = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![0.0, 0.5], vec![0.0, 0.0]];
        let c = StateConstraint {
            values: vec![0.0, 0.0, 0.0, 1.0],
            bound: 0.5,
        };
        FiniteMdp::new(next, cost, 0.9, 1, vec![c]).unwrap()
    }

    fn value_iteration(mdp: &FiniteMdp) -> Vec<f64> {
        let n = mdp.state_count();
        let mut v = vec![0.0; n];
        for _ in 0..5000 {
            v = (0..n)
                .map(|s| {
                    (0..mdp.action_count())
                        .map(|a| mdp.cost[s][a] + mdp.gamma * v[mdp.next[s][a]])
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
        }
        v
    }

    #[test]
    fn unconstrained_feasible_set_is_everything() {
        let mdp = FiniteMdp::new(vec![vec![1], vec![0]], vec![vec![1.0], vec![2.0]], 0.5, 0, vec![]).unwrap();
        assert_eq!(feasible_set(&mdp).unwrap().len(), 2);
    }

    #[test]
    fn absorbing_bad_state_and_its_funnel_are_excluded() {
        assert_eq!(feasible_set(&chain(false)).unwrap().states(), vec![0, 1, 2]);
        assert_eq!(feasible_set(&chain(true)).unwrap().states(), vec![0, 1]);
    }

    #[test]
    fn all_states_unsafe_is_a_construction_error() {
        let c = StateConstraint {
            values: vec![1.0, 1.0],
            bound: 0.0,
        };
        let r = FiniteMdp::new(vec![vec![1], vec![0]], vec![vec![0.0], vec![0.0]], 0.5, 0, vec![c]);
        assert!(matches!(r, Err(TabularError::EmptyFeasibleSet)));
    }

    #[test]
    fn exact_value_is_a_fixed_point_of_the_backup() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mdp = FiniteMdp::random(&mut rng, 6, 4);
            let psi = feasible_set(&mdp).unwrap();
            let pi = feasible_initial_policy(&mdp, &psi);
            let v = evaluate_exact(&mdp, &pi).unwrap();
            let tv = policy_evaluation(&mdp, &pi, &v, 1);
            for (a, b) in v.iter().zip(&tv) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn absorbing_zero_cost_state_has_zero_value() {
        let mdp = FiniteMdp::new(vec![vec![1], vec![1]], vec![vec![1.0], vec![0.0]], 0.9, 2, vec![]).unwrap();
        let v = evaluate_exact(&mdp, &[0, 0]).unwrap();
        assert_eq!(v[1], 0.0);
        assert!((v[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_action_radius_keeps_the_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mdp = FiniteMdp::random(&mut rng, 6, 4);
            let psi = feasible_set(&mdp).unwrap();
            let pi = feasible_initial_policy(&mdp, &psi);
            let v = evaluate_exact(&mdp, &pi).unwrap();
            assert_eq!(constrained_improvement(&mdp, &psi, &pi, &v, 0.0).unwrap(), pi);
        }
    }

    #[test]
    fn unconstrained_improvement_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut mdp = FiniteMdp::random(&mut rng, 6, 4);
            mdp.constraints.clear();
            mdp.horizon = 0;
            let psi = feasible_set(&mdp).unwrap();
            let pi = vec![0; mdp.state_count()];
            let v = evaluate_exact(&mdp, &pi).unwrap();
            let improved = constrained_improvement(&mdp, &psi, &pi, &v, f64::INFINITY).unwrap();
            for s in 0..mdp.state_count() {
                let q: Vec<f64> = (0..mdp.action_count())
                    .map(|a| mdp.cost[s][a] + mdp.gamma * v[mdp.next[s][a]])
                    .collect();
                let min = q.iter().copied().fold(f64::INFINITY, f64::min);
                assert_eq!(improved[s], q.iter().position(|&x| x == min).unwrap());
            }
        }
    }

    #[test]
    fn chain_improvement_by_hand() {
        // γ = 0.9, N = 1, terminal γ².
        let mdp = chain(false);
        let psi = feasible_set(&mdp).unwrap();
        let pi = vec![1, 1, 1, 0];
        let v = evaluate_exact(&mdp, &pi).unwrap();
        // Staying forever: V = c/(1-γ).
        assert!((v[0] - 20.0).abs() < 1e-12);
        assert!((v[1] - 20.0).abs() < 1e-12);
        assert!((v[2] - 5.0).abs() < 1e-12);
        // State 0: move costs 1 + 0.9·2 + 0.81·20 = 19.0 < stay 20.
        // State 1: move costs 1 + 0.9·0.5 + 0.81·5 = 5.5 < 20.
        // State 2: moving reaches the unsafe state; stay is the only option.
        let improved = constrained_improvement(&mdp, &psi, &pi, &v, f64::INFINITY).unwrap();
        assert_eq!(improved, vec![0, 0, 1, 0]);
        assert!((lookahead(&mdp, &psi, &pi, &v, 0, 0).unwrap() - 19.0).abs() < 1e-12);
        assert_eq!(lookahead(&mdp, &psi, &pi, &v, 2, 0), None);
    }

    #[test]
    fn optimal_start_finishes_in_one_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let mdp = FiniteMdp::random(&mut rng, 6, 4);
            let psi = feasible_set(&mdp).unwrap();
            let first = constrained_policy_iteration(&mdp, &feasible_initial_policy(&mdp, &psi), f64::INFINITY).unwrap();
            let again = constrained_policy_iteration(&mdp, &first.policy, f64::INFINITY).unwrap();
            assert_eq!(again.iterations, 1);
            assert_eq!(again.policy, first.policy);
        }
    }

    #[test]
    fn forced_action_is_found_by_enumeration() {
        let mdp = chain(true);
        let r = brute_force_optimal(&mdp).unwrap();
        // State 0 may move or stay; state 1 must not move into the funnel.
        assert_eq!(r.policy[1], 1);
        assert_eq!(r.policies_evaluated, 2);
    }

    #[test]
    fn enumeration_matches_value_iteration_without_constraints() {
        let mdp = FiniteMdp::new(vec![vec![0, 1], vec![0, 1]], vec![vec![0.7, 0.2], vec![0.1, 0.9]], 0.8, 0, vec![]).unwrap();
        let bf = brute_force_optimal(&mdp).unwrap();
        let vi = value_iteration(&mdp);
        for s in 0..2 {
            assert!((bf.value[s] - vi[s]).abs() < 1e-10);
        }
    }

    #[test]
    fn policy_iteration_matches_enumeration_on_random_mdps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let mdp = FiniteMdp::random(&mut rng, 6, 4);
            let psi = feasible_set(&mdp).unwrap();
            let pi = constrained_policy_iteration(&mdp, &feasible_initial_policy(&mdp, &psi), f64::INFINITY).unwrap();
            let bf = brute_force_optimal(&mdp).unwrap();
            assert!(pi.iterations <= policy_space_size(&mdp));
            for s in psi.states() {
                assert!((pi.value[s] - bf.value[s]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let mdp = chain(false);
        assert!(matches!(
            constrained_policy_iteration(&mdp, &[0, 0, 0, 0], f64::INFINITY),
            Err(TabularError::InfeasiblePolicy { state: 2 })
        ));
    }

    #[test]
    fn terminal_exponent_switch_changes_the_fixed_point() {
        let a = FiniteMdp::new(vec![vec![0]], vec![vec![1.0]], 0.5, 1, vec![]).unwrap();
        let b = a.clone().with_terminal(TerminalDiscount::PowN);
        // V = 1.5 + f V with f = 0.25 or 0.5.
        assert!((evaluate_exact(&a, &[0]).unwrap()[0] - 2.0).abs() < 1e-15);
        assert!((evaluate_exact(&b, &[0]).unwrap()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let mdp = chain(false);
        let back = FiniteMdp::from_json_str(&mdp.to_json_string()).unwrap();
        assert_eq!(back, mdp);
        assert!(FiniteMdp::from_json_str(r#"{"next":[[0]],"cost":[[0.0]],"gamma":0.5,"horizon":0,"extra":1}"#).is_err());
    }
}
