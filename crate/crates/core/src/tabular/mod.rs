//! Constrained policy iteration on deterministic finite MDPs, with exhaustive
//! oracles for contraction, monotone improvement and optimality.

mod mdp;
mod pi;
mod verify;

pub use mdp::{feasible_set, FeasibleSet, FiniteMdp, StateConstraint, TabularError};
pub use pi::{
    backup, brute_force_optimal, constrained_improvement, constrained_policy_iteration, evaluate_exact, feasible_initial_policy,
    is_feasible_policy, lookahead, policy_evaluation, BruteForceResult, PolicyIterationResult, TabularPolicy, TabularValue,
    ENUMERATION_LIMIT,
};
pub use verify::{
    verify_mdp, verify_one, verify_random, Check, MdpReport, VerificationReport, CONTRACTION_TOL, LOCAL_DELTA_ACTION,
    MONOTONE_TOL, OPTIMALITY_TOL,
};
