use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::netcore::{save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};

use super::config::ExperimentConfig;
use super::engine::{IterationDiagnostics, MetricsRow, Trainer};
use super::evaluate::Evaluation;
use super::TrainerError;

/// Where and how a run writes its files.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactOptions {
    pub dir: PathBuf,
    /// Stored in checkpoint metadata.
    pub config_hash: String,
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub rows: Vec<MetricsRow>,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// Iteration-0 policy over `eval.steps`.
    pub initial_eval: Evaluation,
    /// Final policy over `eval.final_steps`.
    pub final_eval: Evaluation,
}

struct Sinks {
    dir: PathBuf,
    config_hash: String,
    metrics: BufWriter<File>,
    diagnostics: BufWriter<File>,
}

impl Sinks {
    fn open(opts: &ArtifactOptions) -> Result<Self, TrainerError> {
        fs::create_dir_all(opts.dir.join("checkpoints"))?;
        fs::create_dir_all(opts.dir.join("trajectories"))?;
        Ok(Self {
            dir: opts.dir.clone(),
            config_hash: opts.config_hash.clone(),
            metrics: BufWriter::new(File::create(opts.dir.join("metrics.jsonl"))?),
            diagnostics: BufWriter::new(File::create(opts.dir.join("diagnostics.jsonl"))?),
        })
    }

    fn checkpoint(&self, trainer: &Trainer, tag: &str) -> Result<(), TrainerError> {
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            iteration: trainer.iteration() as u64,
            seed: trainer.config().train.seed,
            config_hash: self.config_hash.clone(),
        };
        let dir = self.dir.join("checkpoints");
        let (ps, theta) = trainer.policy();
        save_checkpoint(&dir.join(format!("policy_{tag}.ckpt")), ps, theta, &meta)?;
        let (vs, w) = trainer.value();
        save_checkpoint(&dir.join(format!("value_{tag}.ckpt")), vs, w, &meta)?;
        Ok(())
    }

    fn trajectory(&self, trainer: &Trainer, eval: &Evaluation, name: &str) -> Result<(), TrainerError> {
        let file = BufWriter::new(File::create(self.dir.join("trajectories").join(name))?);
        eval.write_csv(file, trainer.model(), trainer.control_period())
    }
}

/// Path of the policy checkpoint written after `iteration` iterations.
pub fn policy_checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("policy_{iteration:06}.ckpt"))
}

/// Runs the configured number of iterations.
///
/// With `artifacts`, writes `metrics.jsonl`, `diagnostics.jsonl`, checkpoints
/// every `train.checkpoint_every` iterations plus the final one, and the
/// initial and final evaluation trajectories. On an iteration error the last
/// good networks are checkpointed under the tag `last_good`.
pub fn train(
    config: &ExperimentConfig,
    artifacts: Option<&ArtifactOptions>,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome, TrainerError> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut sinks = artifacts.map(Sinks::open).transpose()?;
    let initial_eval = trainer.evaluate(config.eval.steps)?;
    if let Some(s) = &sinks {
        s.trajectory(&trainer, &initial_eval, "eval_initial.csv")?;
    }
    let mut rows = Vec::with_capacity(config.train.iterations);
    let mut diagnostics = Vec::with_capacity(config.train.iterations);
    for _ in 0..config.train.iterations {
        let out = match trainer.iterate() {
            Ok(out) => out,
            Err(e) => {
                if let Some(s) = &mut sinks {
                    s.metrics.flush()?;
                    s.diagnostics.flush()?;
                    s.checkpoint(&trainer, "last_good")?;
                }
                return Err(e);
            }
        };
        if let Some(s) = &mut sinks {
            serde_json::to_writer(&mut s.metrics, &out.row)?;
            s.metrics.write_all(b"\n")?;
            serde_json::to_writer(&mut s.diagnostics, &out.diagnostics)?;
            s.diagnostics.write_all(b"\n")?;
            let k = config.train.checkpoint_every;
            let done = trainer.iteration();
            if k > 0 && done % k == 0 && done != config.train.iterations {
                s.checkpoint(&trainer, &format!("{done:06}"))?;
            }
        }
        on_row(&out.row);
        rows.push(out.row);
        diagnostics.push(out.diagnostics);
    }
    let final_eval = trainer.evaluate(config.eval.final_steps)?;
    if let Some(s) = &mut sinks {
        s.metrics.flush()?;
        s.diagnostics.flush()?;
        s.checkpoint(&trainer, &format!("{:06}", trainer.iteration()))?;
        s.trajectory(&trainer, &final_eval, "eval_final.csv")?;
    }
    Ok(TrainOutcome {
        trainer,
        rows,
        diagnostics,
        initial_eval,
        final_eval,
    })
}
