//! `advest train` and `advest eval`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use advest_core::envs::AnyEnv;
use advest_core::ppo::{evaluate, EvalMode, Evaluation, IterationRecord, RunLog, Trainer};
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{config_hash, hex, ExperimentConfig};
use crate::{csvio, HarnessError, Result};

pub const RUNLOG_FILE: &str = "runlog.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub iterations: u64,
    pub env_steps: u64,
    pub final_mean_return_100: f64,
    pub final_success_rate_100: f64,
    pub files: Vec<String>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
}

pub fn checkpoint_name(iteration: u64) -> String {
    format!("checkpoints/iter_{iteration:06}.bin")
}

/// Train until the budget is spent, appending each iteration to the CSV log
/// and saving checkpoints. `resume` continues a saved run; its config hash
/// must match `config`.
pub fn train(config: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let hash = config_hash(&config.env, &config.trainer);
    let mut trainer = match resume {
        Some(path) => {
            let (saved, ckpt) = checkpoint::load(path)?;
            if saved != hash {
                return Err(HarnessError::Config(format!(
                    "{}: config hash {} does not match this configuration ({}); refusing to resume",
                    path.display(),
                    hex(&saved),
                    hex(&hash)
                )));
            }
            ckpt.trainer
        }
        None => {
            let env = config.env.build(config.trainer.gamma)?;
            Trainer::new(config.trainer.clone(), |_| env.clone())?
        }
    };
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    let log_path = out.join(RUNLOG_FILE);
    let mut log = csvio::writer(&log_path)?;
    log.write_record(IterationRecord::COLUMNS)?;
    for rec in &trainer.log().records {
        log.serialize(rec)?;
    }
    let offset = trainer.log().records.last().map_or(0.0, |r| r.wall_clock_s);
    let start = Instant::now();
    let record_clock = config.record_wall_clock;
    let mut clock = move || {
        if record_clock {
            offset + start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let mut files = vec![RUNLOG_FILE.to_string()];
    while !trainer.is_done() {
        let rec = trainer.iterate(&mut clock)?;
        log.serialize(rec)?;
        log.flush().map_err(HarnessError::io(&log_path))?;
        if config.checkpoint_every > 0 && rec.iteration % config.checkpoint_every == 0 {
            let name = checkpoint_name(rec.iteration);
            save(out, &name, &hash, config, &trainer)?;
            files.push(name);
        }
    }
    log.flush().map_err(HarnessError::io(&log_path))?;
    save(out, CHECKPOINT_FILE, &hash, config, &trainer)?;
    files.push(CHECKPOINT_FILE.to_string());
    files.push(MANIFEST_FILE.to_string());
    let last = trainer.log().records.last().copied();
    let manifest = Manifest {
        command: "train",
        config_hash: hex(&hash),
        config: config.clone(),
        iterations: trainer.iteration(),
        env_steps: trainer.env_steps(),
        final_mean_return_100: last.map_or(0.0, |r| r.mean_return_100),
        final_success_rate_100: last.map_or(0.0, |r| r.success_rate_100),
        files,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(TrainOutcome {
        log: trainer.log().clone(),
        out_dir: out.clone(),
        checkpoint: out.join(CHECKPOINT_FILE),
    })
}

fn save(out: &Path, name: &str, hash: &[u8; 32], config: &ExperimentConfig, trainer: &Trainer<AnyEnv>) -> Result<()> {
    let ckpt = Checkpoint {
        env: config.env.clone(),
        trainer: trainer.clone(),
    };
    checkpoint::save(&out.join(name), hash, &ckpt)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(HarnessError::io(path))
}

/// Evaluate the policy stored in a checkpoint on a fresh copy of its
/// environment.
pub fn eval_checkpoint(path: &Path, episodes: usize, seed: u64, mode: EvalMode) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(HarnessError::Config("--episodes must be at least 1".into()));
    }
    let (_, ckpt) = checkpoint::load(path)?;
    let mut env = ckpt.env.build(ckpt.trainer.config().gamma)?;
    Ok(evaluate(ckpt.trainer.policy(), &mut env, episodes, seed, mode)?)
}
