use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cdadp::netcore::load_checkpoint;
use cdadp::tabular::{verify_one, verify_random, FiniteMdp, VerificationReport};
use cdadp::trainer::{train, Algorithm, ArtifactOptions, ExperimentConfig, MetricsRow, TrainOutcome, Trainer};
use serde_json::json;

use crate::config::{resolve, Preset, Resolved};
use crate::plot::{box_summary, training_curves, BoxStats, Curve};

pub const OUT_ROOT_ENV: &str = "CDADP_OUT_ROOT";

/// Flags shared by every command that builds an experiment config.
#[derive(Debug, Clone, clap::Args)]
pub struct ConfigArgs {
    /// TOML file layered over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "paper")]
    pub preset: Preset,
    /// `section.key=value`, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve_with(&self, extra: Vec<String>) -> Result<Resolved> {
        let mut sets = self.sets.clone();
        sets.extend(extra);
        resolve(self.preset, self.config.as_deref(), &sets)
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// `(iteration + 1, eval_cost)` for every evaluated row.
fn curve_points(rows: &[MetricsRow]) -> Vec<(f64, f64)> {
    rows.iter().filter_map(|r| r.eval_cost.map(|c| ((r.iter + 1) as f64, c))).collect()
}

/// Trains one configuration into `dir`, writing the resolved config first.
fn run_into(resolved: &Resolved, dir: &Path, quiet: bool) -> Result<TrainOutcome> {
    fs::create_dir_all(dir.join("plots")).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), &resolved.snapshot)?;
    let opts = ArtifactOptions {
        dir: dir.to_path_buf(),
        config_hash: resolved.hash.clone(),
    };
    let total = resolved.config.train.iterations;
    let every = (total / 20).max(1);
    let outcome = train(&resolved.config, Some(&opts), |row| {
        if !quiet && ((row.iter + 1) % every == 0 || row.iter + 1 == total) {
            let cost = row.eval_cost.map_or("-".to_string(), |c| format!("{c:.4}"));
            eprintln!("iter {:>6}  mean_G {:>12.4}  eval {:>12}  {}", row.iter + 1, row.mean_g, cost, row.branch);
        }
    })
    .with_context(|| format!("training into {}", dir.display()))?;
    let mut points = vec![(0.0, outcome.initial_eval.cost)];
    points.extend(curve_points(&outcome.rows));
    let label = resolved.config.train.algorithm.as_str().to_string();
    training_curves(&dir.join("plots/training_curve.svg"), "training curve", &[Curve { label, points }])?;
    Ok(outcome)
}

pub fn cmd_train(
    args: &ConfigArgs,
    algo: Option<Algorithm>,
    iters: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(a) = algo {
        extra.push(format!("train.algorithm={}", a.as_str()));
    }
    if let Some(n) = iters {
        extra.push(format!("train.iterations={n}"));
    }
    if let Some(s) = seed {
        extra.push(format!("train.seed={s}"));
    }
    let resolved = args.resolve_with(extra)?;
    let t = &resolved.config.train;
    let dir = out.unwrap_or_else(|| {
        out_root().join(format!("{}-seed{}-{}", t.algorithm.as_str(), t.seed, resolved.short_hash()))
    });
    let outcome = run_into(&resolved, &dir, false)?;
    let summary = json!({
        "out": dir,
        "config_hash": resolved.hash,
        "iterations": outcome.rows.len(),
        "initial_cost": outcome.initial_eval.cost,
        "final_cost": outcome.final_eval.cost,
        "final_steps": outcome.final_eval.steps_completed,
        "final_excess": outcome.final_eval.max_excess,
        "final_failure": outcome.final_eval.failure,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// The run directory a checkpoint belongs to, when it sits in `<run>/checkpoints/`.
fn run_dir_of(checkpoint: &Path) -> Option<PathBuf> {
    let parent = checkpoint.parent()?;
    (parent.file_name()? == "checkpoints").then(|| parent.parent().map(Path::to_path_buf)).flatten()
}

pub fn cmd_eval(args: &ConfigArgs, checkpoint: &Path, steps: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let run_dir = run_dir_of(checkpoint);
    let mut args = args.clone();
    if args.config.is_none() {
        args.config = run_dir.as_ref().map(|d| d.join("config.toml")).filter(|p| p.exists());
    }
    let extra = seed.map(|s| vec![format!("eval.seed={s}")]).unwrap_or_default();
    let resolved = args.resolve_with(extra)?;
    let config: ExperimentConfig = resolved.config;
    let (spec, theta) = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if spec != config.policy_spec() {
        bail!(
            "checkpoint {} does not match the configured policy network ({} parameters expected, {} found)",
            checkpoint.display(),
            config.policy_spec().param_count(),
            theta.len()
        );
    }
    let steps = steps.unwrap_or(config.eval.final_steps);
    let mut trainer = Trainer::new(config)?;
    trainer.set_policy_params(theta)?;
    let eval = trainer.evaluate(steps)?;
    let dir = out.or_else(|| run_dir.map(|d| d.join("trajectories"))).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("policy");
    let csv = dir.join(format!("eval_{stem}_{steps}.csv"));
    eval.write_csv(fs::File::create(&csv)?, trainer.model(), trainer.control_period())?;
    let report = json!({
        "checkpoint": checkpoint,
        "steps": steps,
        "x0": trainer.eval_start(),
        "cost": eval.cost,
        "max_excess": eval.max_excess,
        "violated": eval.violated(),
        "steps_completed": eval.steps_completed,
        "failure": eval.failure,
        "trajectory": csv,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// One line of a comparison: an algorithm, optionally with a PTRADP weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub algorithm: Algorithm,
    pub eta: Option<f64>,
}

impl Variant {
    pub fn label(&self) -> String {
        match self.eta {
            Some(eta) => format!("{}_eta{eta}", self.algorithm.as_str()),
            None => self.algorithm.as_str().to_string(),
        }
    }

    fn overrides(&self, seed: u64) -> Vec<String> {
        let mut v = vec![format!("train.algorithm={}", self.algorithm.as_str()), format!("train.seed={seed}")];
        if let Some(eta) = self.eta {
            v.push(format!("train.eta={eta}"));
        }
        v
    }
}

/// PTRADP expands into one variant per weight when weights are given.
pub fn variants(algos: &[Algorithm], etas: &[f64]) -> Vec<Variant> {
    let mut out = Vec::new();
    for &algorithm in algos {
        if algorithm == Algorithm::Ptradp && !etas.is_empty() {
            out.extend(etas.iter().map(|&eta| Variant { algorithm, eta: Some(eta) }));
        } else {
            out.push(Variant { algorithm, eta: None });
        }
    }
    out
}

#[derive(Debug, Clone, serde::Serialize)]
struct RunResult {
    seed: u64,
    dir: PathBuf,
    /// Cost at the last evaluated training iteration.
    curve_final_cost: Option<f64>,
    /// Cost of the final policy over `eval.final_steps`.
    final_cost: Option<f64>,
    /// Worst per-constraint excess of that final evaluation.
    final_excess: Option<f64>,
    error: Option<String>,
    #[serde(skip)]
    curve: Vec<(f64, f64)>,
}

fn stats_json(samples: &[f64]) -> serde_json::Value {
    match BoxStats::of(samples) {
        Some(s) => json!({"n": samples.len(), "median": s.median, "min": s.min, "max": s.max, "q1": s.q1, "q3": s.q3}),
        None => serde_json::Value::Null,
    }
}

/// Median across runs at each iteration all runs evaluated.
fn median_curve(runs: &[RunResult]) -> Vec<(f64, f64)> {
    let ok: Vec<&RunResult> = runs.iter().filter(|r| r.error.is_none()).collect();
    let Some(first) = ok.first() else { return Vec::new() };
    first
        .curve
        .iter()
        .enumerate()
        .filter_map(|(k, &(x, _))| {
            let ys: Vec<f64> = ok.iter().filter_map(|r| r.curve.get(k).filter(|p| p.0 == x).map(|p| p.1)).collect();
            (ys.len() == ok.len()).then(|| BoxStats::of(&ys).map(|s| (x, s.median))).flatten()
        })
        .collect()
}

/// Trains every variant on every seed. Returns whether all runs succeeded.
pub fn cmd_compare(
    args: &ConfigArgs,
    algos: &[Algorithm],
    etas: &[f64],
    seeds: &[u64],
    iters: Option<usize>,
    out: Option<PathBuf>,
) -> Result<bool> {
    if algos.is_empty() || seeds.is_empty() {
        bail!("compare needs at least one algorithm and one seed");
    }
    let base = args.resolve_with(iters.map(|n| vec![format!("train.iterations={n}")]).unwrap_or_default())?;
    let dir = out.unwrap_or_else(|| out_root().join(format!("compare-{}", base.short_hash())));
    fs::create_dir_all(dir.join("plots"))?;
    fs::write(dir.join("config.toml"), &base.snapshot)?;

    let variants = variants(algos, etas);
    let mut table = Vec::new();
    let mut all_ok = true;
    for variant in &variants {
        let mut runs = Vec::new();
        for &seed in seeds {
            let run_dir = dir.join(variant.label()).join(format!("seed{seed}"));
            eprintln!("== {} seed {seed}", variant.label());
            let result = resolve(args.preset, Some(&dir.join("config.toml")), &variant.overrides(seed))
                .and_then(|r| run_into(&r, &run_dir, true));
            runs.push(match result {
                Ok(o) => {
                    let mut curve = vec![(0.0, o.initial_eval.cost)];
                    curve.extend(curve_points(&o.rows));
                    RunResult {
                        seed,
                        dir: run_dir,
                        curve_final_cost: curve.last().map(|p| p.1),
                        final_cost: Some(o.final_eval.cost),
                        final_excess: Some(o.final_eval.worst_excess()),
                        error: None,
                        curve,
                    }
                }
                Err(e) => {
                    all_ok = false;
                    eprintln!("   failed: {e:#}");
                    RunResult {
                        seed,
                        dir: run_dir,
                        curve_final_cost: None,
                        final_cost: None,
                        final_excess: None,
                        error: Some(format!("{e:#}")),
                        curve: Vec::new(),
                    }
                }
            });
        }
        table.push((variant.clone(), runs));
    }

    let pick = |runs: &[RunResult], f: fn(&RunResult) -> Option<f64>| runs.iter().filter_map(f).collect::<Vec<f64>>();
    let summary: Vec<serde_json::Value> = table
        .iter()
        .map(|(v, runs)| {
            json!({
                "variant": v.label(),
                "algorithm": v.algorithm.as_str(),
                "eta": v.eta,
                "curve_final_cost": stats_json(&pick(runs, |r| r.curve_final_cost)),
                "final_cost": stats_json(&pick(runs, |r| r.final_cost)),
                "final_excess": stats_json(&pick(runs, |r| r.final_excess)),
                "failed_runs": runs.iter().filter(|r| r.error.is_some()).count(),
                "runs": runs,
            })
        })
        .collect();
    write_json(&dir.join("summary.json"), &json!({"config_hash": base.hash, "seeds": seeds, "variants": summary}))?;

    let labels: Vec<String> = table.iter().map(|(v, _)| v.label()).collect();
    let curves: Vec<Curve> = table
        .iter()
        .map(|(v, runs)| Curve {
            label: v.label(),
            points: median_curve(runs),
        })
        .collect();
    training_curves(&dir.join("plots/curves.svg"), "median evaluation cost", &curves)?;
    let panel = |f: fn(&RunResult) -> Option<f64>| table.iter().map(|(_, runs)| BoxStats::of(&pick(runs, f))).collect();
    box_summary(
        &dir.join("plots/summary.svg"),
        &labels,
        &[("final cost", panel(|r| r.final_cost)), ("worst constraint excess", panel(|r| r.final_excess))],
    )?;

    println!("{:<16} {:>5} {:>14} {:>14} {:>14} {:>12}", "variant", "runs", "median cost", "min cost", "max cost", "med excess");
    for (v, runs) in &table {
        let cost = BoxStats::of(&pick(runs, |r| r.final_cost));
        let excess = BoxStats::of(&pick(runs, |r| r.final_excess));
        let f = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<16} {:>5} {:>14} {:>14} {:>14} {:>12}",
            v.label(),
            runs.iter().filter(|r| r.error.is_none()).count(),
            f(cost.map(|s| s.median)),
            f(cost.map(|s| s.min)),
            f(cost.map(|s| s.max)),
            f(excess.map(|s| s.median)),
        );
    }
    println!("summary: {}", dir.join("summary.json").display());
    Ok(all_ok)
}

/// Returns whether every check passed.
pub fn cmd_verify_tabular(mdp: Option<&Path>, random: Option<usize>, seed: u64, out: Option<PathBuf>) -> Result<bool> {
    let report: VerificationReport = match (mdp, random) {
        (Some(path), None) => {
            let mdp = FiniteMdp::load(path).with_context(|| format!("loading MDP {}", path.display()))?;
            verify_one(&mdp, seed)
        }
        (None, Some(n)) => verify_random(n, seed),
        _ => bail!("give exactly one of --mdp or --random"),
    };
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("report.json"), &text)?;
        for r in report.reports.iter().filter(|r| !r.pass) {
            if let Some(w) = &r.witness {
                fs::write(dir.join(format!("witness_{}.json", r.index)), w.to_json_string())?;
            }
        }
    }
    println!("{text}");
    eprintln!("{} of {} MDPs passed", report.mdps - report.failures, report.mdps);
    Ok(report.pass)
}
