//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Pass criterion numbers as
//! arguments (`cargo test --test acceptance -- 1 5 6`) to run a subset.
//! Exits non-zero when any selected criterion fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cdadp::critic::{critic_gradient, critic_loss, CriticBatch};
use cdadp::dynamics::{LtiModel, SystemModel, VehicleModel, VehicleParams};
use cdadp::netcore::ParamVector;
use cdadp::rollout::{actor_gradient, constraint_gradients, constraint_values, return_target, rollout, Discount};
use cdadp::tabular::verify_random;
use cdadp::trainer::{sample_omega, train, Algorithm, ExperimentConfig, IterationDiagnostics, MetricsRow, TrainOutcome};
use cdadp::trsolver::{
    assemble_dual_coefficients, constrained_step, solve_feasibility_dual, unconstrained_step, DenseMetric, DualSettings,
    StepDiagnostics,
};
use common::{central_difference, five_point_difference, relative_error, QcqpInstance};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Iteration budget shared by every run in the algorithm comparisons.
const MATCHED_ITERATIONS: usize = 1000;
const MATCHED_EVAL_EVERY: usize = 25;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const ETAS: [f64; 3] = [0.2, 0.4, 0.6];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Step diagnostics of every training run, collected for the step-budget check.
#[derive(Default)]
struct StepLog {
    runs: usize,
    diagnostics: Vec<IterationDiagnostics>,
}

impl StepLog {
    fn record(&mut self, outcome: &TrainOutcome) {
        self.runs += 1;
        self.diagnostics.extend(outcome.diagnostics.iter().cloned());
    }
}

fn random_direction(like: &ParamVector, rng: &mut ChaCha8Rng) -> ParamVector {
    like.with_values((0..like.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn shifted(theta: &ParamVector, dir: &ParamVector, h: f64) -> ParamVector {
    let mut t = theta.clone();
    t.axpy(h, dir);
    t
}

fn criterion_1() -> Verdict {
    let started = Instant::now();
    let model = VehicleModel::new(VehicleParams::default()).unwrap();
    let config = ExperimentConfig::desk_vehicle();
    let policy = config.policy_spec();
    let value = config.value_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let theta = policy.init_params(&mut rng);
    let w = value.init_params(&mut rng);
    let x0 = sample_omega(&model, &config.omega(), &mut rng, 1000).unwrap();
    let n = 5;
    let discount = Discount::new(config.train.gamma);
    let h = 1e-6;

    let objective = |t: &ParamVector| {
        let traj = rollout(&model, &policy, t, &x0, n).unwrap();
        return_target(&traj, &value, &w, discount).unwrap()
    };
    let constraint_value = |t: &ParamVector, k: usize| {
        let traj = rollout(&model, &policy, t, &x0, n).unwrap();
        constraint_values(&model, &traj).unwrap()[k].eval.value
    };
    let traj = rollout(&model, &policy, &theta, &x0, n).unwrap();
    let grad = actor_gradient(&traj, &policy, &theta, &value, &w, discount).unwrap();
    let cgrads = constraint_gradients(&model, &traj, &policy, &theta).unwrap();

    let (mut actor_worst, mut cons_worst) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let dir = random_direction(&theta, &mut rng);
        let fd = central_difference(|s| objective(&shifted(&theta, &dir, s)), h);
        actor_worst = actor_worst.max(relative_error(grad.dot(&dir), fd, 1e-12));
        for (k, (_, g)) in cgrads.iter().enumerate() {
            let fd = central_difference(|s| constraint_value(&shifted(&theta, &dir, s), k), h);
            cons_worst = cons_worst.max(relative_error(g.dot(&dir), fd, 1e-12));
        }
    }

    let states: Vec<Vec<f64>> = (0..32).map(|_| sample_omega(&model, &config.omega(), &mut rng, 1000).unwrap()).collect();
    let targets: Vec<f64> = (0..32).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let batch = CriticBatch::new(states, targets).unwrap();
    let cg = critic_gradient(&batch, &value, &w).unwrap();
    let mut critic_worst = 0.0f64;
    for _ in 0..20 {
        let dir = random_direction(&w, &mut rng);
        // ELU has a second-derivative jump at 0, so a stencil straddling a kink
        // errs in O(h); a small step keeps that below the tolerance.
        let fd = five_point_difference(|s| critic_loss(&batch, &value, &shifted(&w, &dir, s)).unwrap(), 1e-6);
        critic_worst = critic_worst.max(relative_error(cg.dot(&dir), fd, 1e-12));
    }
    let elapsed = started.elapsed();
    Verdict::new(
        actor_worst <= 1e-4 && cons_worst <= 1e-4 && critic_worst <= 1e-6 && elapsed < Duration::from_secs(60),
        format!(
            "worst relative error: actor {actor_worst:.2e}, {} constraint records {cons_worst:.2e}, critic {critic_worst:.2e}; {:.1}s",
            cgrads.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Verdict {
    let config = ExperimentConfig::desk_vehicle();
    let policy = config.policy_spec();
    let model = VehicleModel::new(VehicleParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let theta = policy.init_params(&mut rng);
    let states: Vec<Vec<f64>> = (0..16).map(|_| sample_omega(&model, &config.omega(), &mut rng, 1000).unwrap()).collect();
    // ∇D_p(θ') = (2/S) Σ J(θ')ᵀ (π(θ') − π(θ)), differenced around θ' = θ.
    let grad_dp = |t: &ParamVector| -> Vec<f64> {
        let mut out = t.zeros_like();
        for x in &states {
            let diff: Vec<f64> = policy
                .forward(t, x)
                .unwrap()
                .iter()
                .zip(policy.forward(&theta, x).unwrap())
                .map(|(a, b)| 2.0 * (a - b) / states.len() as f64)
                .collect();
            out.axpy(1.0, &policy.grad_params(t, x, &diff).unwrap());
        }
        out.into_values()
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let dir = random_direction(&theta, &mut rng);
        let hv = policy.gn_metric_vp(&theta, &states, &dir, 0.0).unwrap();
        let plus = grad_dp(&shifted(&theta, &dir, h));
        let minus = grad_dp(&shifted(&theta, &dir, -h));
        let fd: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        let err: f64 = hv.values().iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(err / scale);
    }
    Verdict::new(worst <= 1e-3, format!("worst relative error over 50 directions {worst:.2e}"))
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut obj_gap, mut exact_gap, mut violation, mut budget) = (0.0f64, 0.0f64, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..200 {
        let m = rng.gen_range(1..=5);
        let inst = QcqpInstance::random(64, m, &mut rng);
        let delta = inst.oracle_delta_min() * rng.gen_range(1.2..4.0) + rng.gen_range(0.005..0.05);
        let metric = DenseMetric::new(inst.h.clone()).unwrap();
        let coeffs = assemble_dual_coefficients(&metric, &inst.g, &inst.c).unwrap();
        let (step, _, _, _) = constrained_step(&coeffs, &inst.z, delta, DualSettings::default()).unwrap();
        let obj = inst.objective(&step);
        let (pg_obj, _, _) = inst.projected_gradient_primal(delta, 100_000);
        let (exact_obj, _) = inst.oracle_primal(delta).unwrap();
        obj_gap = obj_gap.max((obj - pg_obj).abs());
        exact_gap = exact_gap.max((obj - exact_obj).abs());
        violation = violation.max(inst.max_violation(&step));
        budget = budget.max(inst.half_metric(&step) / delta - 1.0);
    }
    // M = 0 closed form −√(2δ/μ) H⁻¹g.
    let mut closed = 0.0f64;
    for _ in 0..20 {
        let inst = QcqpInstance::random(64, 0, &mut rng);
        let metric = DenseMetric::new(inst.h.clone()).unwrap();
        let delta = 10f64.powf(rng.gen_range(-9.0..-1.0));
        let out = unconstrained_step(&inst.g, &metric, delta).unwrap();
        let hinv_g = inst.h.clone().lu().solve(&DVector::from_column_slice(&inst.g)).unwrap();
        let mu = hinv_g.dot(&DVector::from_column_slice(&inst.g));
        let want = hinv_g * -(2.0 * delta / mu).sqrt();
        let got = DVector::from_column_slice(&out.delta_theta);
        closed = closed.max((got - &want).norm() / want.norm());
    }
    Verdict::new(
        obj_gap <= 1e-5 && exact_gap <= 1e-5 && violation <= 1e-6 && closed <= 1e-8,
        format!(
            "200 instances: |Δobjective| vs projected-gradient {obj_gap:.1e}, vs active-set enumeration {exact_gap:.1e}, \
             max violation {violation:.1e}, max budget overshoot {budget:.1e}; M=0 closed form {closed:.1e}"
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut exact_gap, mut dykstra_gap) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = rng.gen_range(1..=5);
        let mut inst = QcqpInstance::random(64, m, &mut rng);
        let s = rng.gen_range(0.0..3.0);
        inst.z.iter_mut().for_each(|z| *z *= s);
        let metric = DenseMetric::new(inst.h.clone()).unwrap();
        let coeffs = assemble_dual_coefficients(&metric, &inst.g, &inst.c).unwrap();
        let got = solve_feasibility_dual(&coeffs.s, &inst.z, DualSettings::default()).unwrap().delta_min;
        exact_gap = exact_gap.max((got - inst.oracle_delta_min()).abs());
        dykstra_gap = dykstra_gap.max((got - inst.dykstra_delta_min()).abs());
    }
    let mut single = 0.0f64;
    for _ in 0..50 {
        let mut inst = QcqpInstance::random(64, 1, &mut rng);
        inst.z[0] = rng.gen_range(0.01..2.0);
        let metric = DenseMetric::new(inst.h.clone()).unwrap();
        let coeffs = assemble_dual_coefficients(&metric, &inst.g, &inst.c).unwrap();
        let got = solve_feasibility_dual(&coeffs.s, &inst.z, DualSettings::default()).unwrap().delta_min;
        let c = DVector::from_column_slice(&inst.c[0]);
        let hinv_c = inst.h.clone().lu().solve(&c).unwrap();
        let want = inst.z[0] * inst.z[0] / (2.0 * c.dot(&hinv_c));
        single = single.max((got - want).abs() / want);
    }
    Verdict::new(
        exact_gap <= 1e-6 && dykstra_gap <= 1e-6 && single <= 1e-8,
        format!(
            "200 instances: |Δδ_min| vs enumeration {exact_gap:.1e}, vs Dykstra projection {dykstra_gap:.1e}; \
             single-constraint closed form relative {single:.1e}"
        ),
    )
}

fn criterion_5() -> Verdict {
    let started = Instant::now();
    let report = verify_random(100, 105);
    let elapsed = started.elapsed();
    let worst = |f: fn(&cdadp::tabular::MdpReport) -> f64| report.reports.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let ratio = worst(|r| r.contraction.worst / r.contraction.limit);
    let rise = worst(|r| r.monotonicity.worst);
    let gap = worst(|r| r.optimality.worst);
    Verdict::new(
        report.pass && elapsed < Duration::from_secs(120),
        format!(
            "{}/{} MDPs pass; worst contraction ratio/γ^N {ratio:.3}, worst value rise {rise:.1e}, \
             worst gap to enumeration {gap:.1e}; {:.1}s",
            report.mdps - report.failures,
            report.mdps,
            elapsed.as_secs_f64()
        ),
    )
}

/// Undiscounted discrete Riccati solution for `A, B, Q, R`.
fn riccati(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let bt_p = b.transpose() * &p;
        let k = (r + &bt_p * b).lu().solve(&(&bt_p * a)).unwrap();
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let done = (&next - &p).amax() <= 1e-13 * p.amax();
        p = next;
        if done {
            break;
        }
    }
    let bt_p = b.transpose() * &p;
    let k = (r + &bt_p * b).lu().solve(&(&bt_p * a)).unwrap();
    (p, k)
}

fn criterion_6(log: &mut StepLog) -> Verdict {
    let started = Instant::now();
    let mut config = ExperimentConfig::lti_default();
    config.train.constraint_samples = 0;
    config.train.iterations = 2000;
    let dt = config.lti.dt;
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, dt]);
    let (q, r) = (DMatrix::identity(2, 2), DMatrix::identity(1, 1));
    let model = LtiModel::double_integrator(dt);
    assert_eq!((&model.a, &model.b, &model.q, &model.r), (&a, &b, &q, &r), "oracle system differs from the model");
    assert_eq!(model.constraint_count(), 0);
    let (p, k) = riccati(&a, &b, &q, &r);

    let outcome = train(&config, None, |_| {}).unwrap();
    log.record(&outcome);
    let x0 = DVector::from_column_slice(outcome.trainer.eval_start());
    let optimum = x0.dot(&(&p * &x0));
    let eval = outcome.trainer.evaluate(config.eval.steps).unwrap();
    let ratio = eval.cost / optimum;
    let elapsed = started.elapsed();
    let theta = outcome.trainer.policy().1.values().to_vec();
    Verdict::new(
        eval.failure.is_none() && (ratio - 1.0).abs() <= 0.05 && elapsed < Duration::from_secs(300),
        format!(
            "cost {:.4} vs Riccati x0ᵀPx0 {optimum:.4} (ratio {ratio:.4}); learned gain [{:.3}, {:.3}] vs LQR [{:.3}, {:.3}]; {:.1}s",
            eval.cost,
            -theta[0],
            -theta[1],
            k[(0, 0)],
            k[(0, 1)],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7(log: &mut StepLog) -> Verdict {
    let started = Instant::now();
    let mut config = ExperimentConfig::desk_vehicle();
    config.train.iterations = 2000;
    config.train.eval_every = 100;
    let outcome = train(&config, None, |_| {}).unwrap();
    log.record(&outcome);
    let initial = &outcome.initial_eval;
    let eval = outcome.trainer.evaluate(400).unwrap();
    let elapsed = started.elapsed();
    let excess_ok = eval.max_excess.len() == 3 && eval.max_excess.iter().all(|e| *e <= 1e-2);
    let cost_ok = initial.cost > 0.0 && eval.cost <= 0.5 * initial.cost;
    Verdict::new(
        eval.steps_completed == 400 && excess_ok && cost_ok && elapsed < Duration::from_secs(1800),
        format!(
            "400-step cost {:.2} vs iteration-0 {:.2}; max excess [{}]; {}/400 steps; {:.0}s",
            eval.cost,
            initial.cost,
            eval.max_excess.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(", "),
            eval.steps_completed,
            elapsed.as_secs_f64()
        ),
    )
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn matched_config(algorithm: Algorithm, seed: u64, eta: Option<f64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk_vehicle();
    c.train.algorithm = algorithm;
    c.train.seed = seed;
    c.train.iterations = MATCHED_ITERATIONS;
    c.train.eval_every = MATCHED_EVAL_EVERY;
    if let Some(eta) = eta {
        c.train.eta = eta;
    }
    c
}

/// Curve summary of one training run.
struct RunSummary {
    final_cost: f64,
    final_excess: f64,
    /// First evaluated iteration from which the cost stays at or below 10% of
    /// the iteration-0 cost; budget + 1 when that never happens.
    settle: usize,
}

fn summarize(initial_cost: f64, rows: &[MetricsRow]) -> RunSummary {
    let evaluated: Vec<(usize, f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let worst = r.excess.as_ref()?.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some((r.iter + 1, r.eval_cost?, worst))
        })
        .collect();
    let (_, final_cost, final_excess) = *evaluated.last().expect("matched runs evaluate");
    let threshold = 0.1 * initial_cost.abs();
    let mut settle = MATCHED_ITERATIONS + 1;
    for (it, cost, _) in evaluated.iter().rev() {
        if *cost > threshold {
            break;
        }
        settle = *it;
    }
    RunSummary {
        final_cost,
        final_excess,
        settle,
    }
}

fn run_matched(algorithm: Algorithm, eta: Option<f64>, log: &mut StepLog) -> Vec<RunSummary> {
    SEEDS
        .iter()
        .map(|&seed| {
            let config = matched_config(algorithm, seed, eta);
            let outcome = train(&config, None, |_| {}).unwrap();
            log.record(&outcome);
            summarize(outcome.initial_eval.cost, &outcome.rows)
        })
        .collect()
}

fn criterion_8(log: &mut StepLog) -> Verdict {
    let started = Instant::now();
    let mut med = Vec::new();
    for algo in [Algorithm::Cdadp, Algorithm::Tradp, Algorithm::Gpi] {
        let runs = run_matched(algo, None, log);
        let cost = median(&runs.iter().map(|r| r.final_cost).collect::<Vec<_>>());
        let settle = median(&runs.iter().map(|r| r.settle as f64).collect::<Vec<_>>());
        med.push((algo, cost, settle));
    }
    let [(_, cd, cd_s), (_, tr, tr_s), (_, gp, gp_s)] = [med[0], med[1], med[2]];
    // Identical trajectories (no active constraint) still differ in the last ulps between the
    // dual solve and the closed form, so "≤" admits a round-off tie.
    let tie = (cd - tr).abs() <= 1e-12 * tr.abs().max(1.0);
    let order = (cd <= tr || tie) && tr < gp;
    let slowest = gp_s > cd_s && gp_s > tr_s;
    Verdict::new(
        order && slowest,
        format!(
            "median final cost CDADP {cd:.2}, TRADP {tr:.2}, GPI {gp:.2} (CDADP − TRADP = {:.1e}{}); median settling iteration CDADP {cd_s}, TRADP {tr_s}, GPI {gp_s} \
             ({} seeds, {MATCHED_ITERATIONS} iterations; {:.0}s)",
            cd - tr,
            if cd <= tr { "" } else if tie { ", round-off tie" } else { "" },
            SEEDS.len(),
            started.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_9(log: &mut StepLog) -> Verdict {
    let started = Instant::now();
    let mut rows = Vec::new();
    for eta in ETAS {
        let runs = run_matched(Algorithm::Ptradp, Some(eta), log);
        let excess = median(&runs.iter().map(|r| r.final_excess).collect::<Vec<_>>());
        let cost = median(&runs.iter().map(|r| r.final_cost).collect::<Vec<_>>());
        rows.push((eta, excess, cost));
    }
    let excess_ok = rows.windows(2).all(|w| w[1].1 <= w[0].1);
    let cost_ok = rows.windows(2).all(|w| w[1].2 >= w[0].2);
    let table = rows
        .iter()
        .map(|(eta, e, c)| format!("η={eta}: excess {e:.4}, cost {c:.2}"))
        .collect::<Vec<_>>()
        .join("; ");
    Verdict::new(excess_ok && cost_ok, format!("medians {table} ({:.0}s)", started.elapsed().as_secs_f64()))
}

/// Every trust-region step of every run is checked; CDADP steps are counted separately.
fn criterion_10(log: &StepLog) -> Verdict {
    let inside = |s: &&&StepDiagnostics| s.step_metric <= s.delta_active * (1.0 + 1e-6);
    let all: Vec<&StepDiagnostics> = log.diagnostics.iter().filter_map(|d| d.step.as_ref()).collect();
    let cdadp: Vec<&StepDiagnostics> = log
        .diagnostics
        .iter()
        .filter(|d| d.algorithm == Algorithm::Cdadp)
        .filter_map(|d| d.step.as_ref())
        .collect();
    let (all_in, cdadp_in) = (all.iter().filter(inside).count(), cdadp.iter().filter(inside).count());
    let worst = all.iter().map(|s| s.step_metric / s.delta_active).fold(0.0f64, f64::max);
    Verdict::new(
        !cdadp.is_empty() && cdadp_in == cdadp.len() && all_in == all.len(),
        format!(
            "{cdadp_in}/{} applied CDADP steps and {all_in}/{} trust-region steps overall within budget over {} runs; \
             worst ½ΔᵀHΔ/δ_active = {worst:.9}",
            cdadp.len(),
            all.len(),
            log.runs
        ),
    )
}

const TITLES: [&str; 10] = [
    "gradient fidelity",
    "metric fidelity",
    "dual solver vs primal oracle",
    "feasibility detection",
    "tabular policy iteration",
    "LQR oracle",
    "desk-scale vehicle training",
    "algorithm ordering",
    "penalty weight trend",
    "step budget invariant",
];

fn main() -> ExitCode {
    let requested: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|k| (1..=10).contains(k)).collect();
    let selected: BTreeSet<usize> = if requested.is_empty() { (1..=10).collect() } else { requested };
    let mut log = StepLog::default();
    let mut failed = 0;
    let mut report = |k: usize, v: Verdict| {
        if !v.pass {
            failed += 1;
        }
        println!("{} criterion {k} ({}): {}", if v.pass { "PASS" } else { "FAIL" }, TITLES[k - 1], v.detail);
    };
    for k in selected.iter().copied().filter(|k| *k < 10) {
        let verdict = match k {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(&mut log),
            7 => criterion_7(&mut log),
            8 => criterion_8(&mut log),
            _ => criterion_9(&mut log),
        };
        report(k, verdict);
    }
    if selected.contains(&10) {
        if (6..=9).any(|k| !selected.contains(&k)) {
            println!("note: criterion 10 covers only the training runs selected in this invocation");
        }
        report(10, criterion_10(&log));
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
