//! Experiment configuration: one JSON document, unknown keys rejected.
//!
//! ```json
//! {
//!   "env": { "name": "cartpole" },
//!   "trainer": { "sample_length": 128, "partial_coef": 64, "seed": 1 },
//!   "sweep": { "sample_lengths": [64, 128], "partial_coefs": [32, 64], "n_seeds": 3 },
//!   "out_dir": "runs/cartpole"
//! }
//! ```

use std::path::{Path, PathBuf};

use advest_core::envs::{AnyEnv, CartPoleLike, ChainEnv, SparseGrid};
use advest_core::oracle::TabularMdp;
use advest_core::ppo::TrainerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Cartpole {},
    CartpoleContinuous {},
    SparseGrid {},
    /// Continuing ring of states; see [`TabularMdp::cyclic_chain`].
    CyclicChain {
        n_states: usize,
        slip: f64,
        horizon: usize,
    },
    /// Corridor with a terminal exit at each end; see [`TabularMdp::two_exit_chain`].
    TwoExitChain {
        n_states: usize,
        left_reward: f64,
        right_reward: f64,
        slip: f64,
        horizon: usize,
    },
}

impl EnvConfig {
    /// The underlying tabular MDP for chain environments.
    pub fn tabular(&self, gamma: f64) -> Result<Option<TabularMdp>> {
        Ok(match *self {
            EnvConfig::CyclicChain { n_states, slip, .. } => Some(TabularMdp::cyclic_chain(n_states, slip, gamma)?),
            EnvConfig::TwoExitChain {
                n_states,
                left_reward,
                right_reward,
                slip,
                ..
            } => Some(TabularMdp::two_exit_chain(n_states, left_reward, right_reward, slip, gamma)?),
            _ => None,
        })
    }

    pub fn build(&self, gamma: f64) -> Result<AnyEnv> {
        Ok(match *self {
            EnvConfig::Cartpole {} => AnyEnv::CartPole(CartPoleLike::new()),
            EnvConfig::CartpoleContinuous {} => AnyEnv::CartPole(CartPoleLike::continuous()),
            EnvConfig::SparseGrid {} => AnyEnv::Grid(SparseGrid::new()),
            EnvConfig::CyclicChain { horizon, .. } | EnvConfig::TwoExitChain { horizon, .. } => {
                let mdp = self.tabular(gamma)?.expect("chain variants are tabular");
                AnyEnv::Chain(ChainEnv::new(mdp, horizon)?)
            }
        })
    }
}

/// Grid of `(T, ε)` cells, each run for `n_seeds` seeds starting at the
/// trainer seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub sample_lengths: Vec<usize>,
    pub partial_coefs: Vec<usize>,
    pub n_seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sample_lengths: vec![64, 128],
            partial_coefs: vec![32, 64],
            n_seeds: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    /// The value network (from a checkpoint, or freshly initialized).
    #[default]
    Network,
    /// The value network with its output layer zeroed, so `V ≡ 0`.
    Zero,
    /// Exact tabular values (chain environments only), plus `error_field`.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    /// GAE samples collected per position.
    pub count: usize,
    pub value: ValueSource,
    /// Added to the exact values state by state; empty means no error.
    pub error_field: Vec<f64>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            value: ValueSource::Network,
            error_field: Vec::new(),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Write elapsed seconds into the log; `false` writes 0 so repeated runs
    /// produce byte-identical files.
    #[serde(default = "default_true")]
    pub record_wall_clock: bool,
    /// Save a checkpoint every this many iterations (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: u64,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget_steps: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// A parsed config plus the text it came from, for line-anchored messages.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    source: String,
}

impl LoadedConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde_json appends " at line L column C"; anchor it at the front.
            let msg = msg.rsplit_once(" at line ").map_or(msg.as_str(), |(m, _)| m).to_string();
            HarnessError::Config(format!("{}:{}:{}: {msg}", path.display(), e.line(), e.column()))
        })?;
        Ok(Self {
            config,
            path: path.to_path_buf(),
            source: text.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::parse(path, &text)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.config.trainer.seed = seed;
        }
        if let Some(budget) = overrides.budget_steps {
            self.config.trainer.total_env_steps = budget;
        }
        if let Some(out) = &overrides.out_dir {
            self.config.out_dir = out.clone();
        }
    }

    /// 1-based line of the first `"key":` in the source text.
    fn key_line(&self, key: &str) -> Option<usize> {
        let needle = format!("\"{key}\"");
        self.source.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
    }

    fn anchored(&self, keys: &[&str], message: &str) -> HarnessError {
        let line = keys
            .iter()
            .filter(|k| message.contains(*k))
            .chain(keys.iter())
            .find_map(|k| self.key_line(k))
            .unwrap_or(1);
        HarnessError::Config(format!("{}:{line}: {message}", self.path.display()))
    }

    /// Semantic checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let t = &c.trainer;
        if t.partial_gae && t.partial_coef > t.sample_length {
            return Err(self.anchored(
                &["partial_coef"],
                &format!(
                    "partial_coef (epsilon = {}) exceeds sample_length (T = {})",
                    t.partial_coef, t.sample_length
                ),
            ));
        }
        if let Err(e) = t.validate() {
            let keys = [
                "partial_coef",
                "sample_length",
                "n_actors",
                "epochs",
                "minibatch_size",
                "clip_coef",
                "learning_rate",
                "value_coef",
                "entropy_coef",
                "hidden_sizes",
                "gamma",
                "lambda",
                "trainer",
            ];
            return Err(self.anchored(&keys, &e.to_string()));
        }
        if let Err(e) = c.env.build(t.gamma) {
            return Err(self.anchored(&["env"], &e.to_string()));
        }
        if c.sweep.sample_lengths.is_empty() || c.sweep.partial_coefs.is_empty() || c.sweep.n_seeds == 0 {
            return Err(self.anchored(&["sweep"], "sweep grids and n_seeds must be non-empty"));
        }
        if c.profile.count < 100 {
            return Err(self.anchored(&["count", "profile"], "profile count must be at least 100"));
        }
        Ok(())
    }
}

/// SHA-256 over the parts of the config that determine a training run.
pub fn config_hash(env: &EnvConfig, trainer: &TrainerConfig) -> [u8; 32] {
    let canonical = serde_json::to_vec(&(env, trainer)).expect("config serializes");
    Sha256::digest(&canonical).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadedConfig> {
        LoadedConfig::parse(Path::new("run.json"), text)
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse(r#"{"env": {"name": "cartpole"}}"#).unwrap();
        assert_eq!(c.config.trainer, TrainerConfig::default());
        assert_eq!(c.config.profile.count, 2000);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_errors_with_lines() {
        let text = "{\n  \"env\": {\"name\": \"cartpole\"},\n  \"trainer\": {\n    \"gama\": 0.9\n  }\n}";
        let err = parse(text).unwrap_err().to_string();
        assert!(err.starts_with("run.json:4:"), "{err}");
        assert!(err.contains("gama"), "{err}");
        let err = parse(r#"{"env": {"name": "cartpole", "size": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("size"), "{err}");
        let err = parse(r#"{"env": {"name": "mountain_car"}}"#).unwrap_err().to_string();
        assert!(err.contains("mountain_car"), "{err}");
    }

    #[test]
    fn epsilon_above_t_names_both_values() {
        let text = "{\n \"env\": {\"name\": \"sparse_grid\"},\n \"trainer\": {\n  \"sample_length\": 64,\n  \"partial_coef\": 128\n }\n}";
        let err = parse(text).unwrap().validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.starts_with("run.json:5:"), "{msg}");
        assert!(msg.contains("128") && msg.contains("64"), "{msg}");
    }

    #[test]
    fn overrides_and_hash() {
        let mut c = parse(r#"{"env": {"name": "cartpole"}, "out_dir": "a"}"#).unwrap();
        let before = config_hash(&c.config.env, &c.config.trainer);
        c.apply(&Overrides {
            out_dir: Some("b".into()),
            ..Overrides::default()
        });
        assert_eq!(config_hash(&c.config.env, &c.config.trainer), before);
        c.apply(&Overrides {
            seed: Some(9),
            ..Overrides::default()
        });
        assert_ne!(config_hash(&c.config.env, &c.config.trainer), before);
        assert_eq!(hex(&before).len(), 64);
    }

    #[test]
    fn chain_envs_build() {
        let c = parse(r#"{"env": {"name": "cyclic_chain", "n_states": 5, "slip": 0.2, "horizon": 100}}"#).unwrap();
        assert!(matches!(c.config.env.build(0.9).unwrap(), AnyEnv::Chain(_)));
        let bad = parse(r#"{"env": {"name": "cyclic_chain", "n_states": 5, "slip": 2.0, "horizon": 100}}"#).unwrap();
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
    }
}
