//! `advest profile-variance`: spread of truncated GAE at every segment
//! position, split into its reward and value parts, for fixed parameters.

use std::path::Path;

use advest_core::envs::Environment;
use advest_core::estimators::{decompose, gae_truncated, Trace};
use advest_core::nn::{Mlp, Policy};
use advest_core::oracle::{estimator_study, exact_state_values, rollout_rng, PositionStats, StudyTable, TabularPolicy};
use advest_core::ppo::{env_action, episode_seed, Trainer};

use crate::checkpoint;
use crate::config::{config_hash, hex, ExperimentConfig, ValueSource};
use crate::csvio::{self, PROFILE_COLUMNS};
use crate::run::write_json;
use crate::{HarnessError, Result};

pub const PROFILE_FILE: &str = "profile.csv";

/// Roll `count` independent segments of length `T` with `policy`, each from
/// a fresh reset, and accumulate per-position statistics of `Â`, `Â^r`,
/// `Â^v`. There is no ground truth here, so the bias column stays NaN.
pub fn profile_network<E: Environment + Clone>(
    env: &E,
    policy: &Policy,
    value_net: &Mlp,
    config: &ExperimentConfig,
) -> Result<StudyTable> {
    let t_len = config.trainer.sample_length;
    let params = config.trainer.estimator_params()?;
    let seed = config.trainer.seed;
    let value = |obs: &[f64]| -> Result<f64> { Ok(value_net.forward(obs)?[0]) };
    let mut stats = PositionStats::new(t_len);
    let mut rewards = Vec::with_capacity(t_len);
    let mut values = Vec::with_capacity(t_len);
    let mut dones = Vec::with_capacity(t_len);
    for i in 0..config.profile.count {
        let mut env = env.clone();
        let mut rng = rollout_rng(seed, i as u64);
        let mut episode = 0;
        let mut obs = env.reset(episode_seed(seed, i, episode));
        rewards.clear();
        values.clear();
        dones.clear();
        for _ in 0..t_len {
            values.push(value(&obs)?);
            let (action, _) = policy.sample_action(&obs, &mut rng)?;
            let step = env.step(&env_action(&action))?;
            rewards.push(step.reward);
            dones.push(step.done);
            obs = step.observation;
            if step.done {
                episode += 1;
                obs = env.reset(episode_seed(seed, i, episode));
            }
        }
        let bootstrap = if dones[t_len - 1] { 0.0 } else { value(&obs)? };
        let trace = Trace::new(&rewards, &values, &dones, bootstrap)?;
        let adv = gae_truncated(&trace, &params)?;
        for (t, a) in adv.iter().enumerate() {
            let (rp, vp) = decompose(&trace, t, &params)?;
            stats.record(t, *a, None, rp, vp);
        }
    }
    Ok(stats.table())
}

/// Uniform random policy on a chain environment with exact values plus the
/// configured error field; the bias column is measured against the exact
/// advantage.
pub fn profile_exact(config: &ExperimentConfig) -> Result<StudyTable> {
    let trainer = &config.trainer;
    let mdp = config.env.tabular(trainer.gamma)?.ok_or_else(|| {
        HarnessError::Config("profile value \"exact\" needs a chain environment".into())
    })?;
    let policy = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let mut table = exact_state_values(&mdp, &policy)?;
    let errors = &config.profile.error_field;
    if !errors.is_empty() {
        if errors.len() != table.len() {
            return Err(HarnessError::Config(format!(
                "error_field has {} entries, the chain has {} states",
                errors.len(),
                table.len()
            )));
        }
        for (v, e) in table.iter_mut().zip(errors) {
            *v += e;
        }
    }
    Ok(estimator_study(
        &mdp,
        &policy,
        &table,
        &trainer.estimator_params()?,
        trainer.sample_length,
        config.profile.count,
        trainer.seed,
    )?)
}

/// Run the profiler and write `profile.csv` (exactly `T` rows) and a
/// manifest. Network modes use the checkpoint's parameters when given,
/// otherwise freshly initialized ones.
pub fn profile(config: &ExperimentConfig, checkpoint_path: Option<&Path>) -> Result<StudyTable> {
    let table = match config.profile.value {
        ValueSource::Exact => profile_exact(config)?,
        source => {
            let (policy, mut value_net) = match checkpoint_path {
                Some(path) => {
                    let (_, ckpt) = checkpoint::load(path)?;
                    (ckpt.trainer.policy().clone(), ckpt.trainer.value_net().clone())
                }
                None => {
                    let env = config.env.build(config.trainer.gamma)?;
                    let trainer = Trainer::new(config.trainer.clone(), |_| env.clone())?;
                    (trainer.policy().clone(), trainer.value_net().clone())
                }
            };
            if source == ValueSource::Zero {
                let last = value_net.n_layers() - 1;
                value_net.scale_layer(last, 0.0);
            }
            let env = config.env.build(config.trainer.gamma)?;
            profile_network(&env, &policy, &value_net, config)?
        }
    };
    let out = &config.out_dir;
    csvio::write_all(&out.join(PROFILE_FILE), &PROFILE_COLUMNS, &table.rows)?;
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "command": "profile-variance",
            "config_hash": hex(&config_hash(&config.env, &config.trainer)),
            "config": config,
            "checkpoint": checkpoint_path.map(|p| p.display().to_string()),
            "rows": table.rows.len(),
        }),
    )?;
    Ok(table)
}
