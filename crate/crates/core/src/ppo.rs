//! PPO with partial GAE.
//!
//! Each iteration every actor tops its segment up to `T` transitions, the
//! truncated GAE of the whole segment is computed, and only the first `ε`
//! estimates (plus every completed episode) are trained on. The unterminated
//! remainder is carried into the next segment, where it sits at the front and
//! gets a low-bias estimate once more data has arrived behind it. With
//! `partial_gae = false` the trainer runs plain PPO: fresh segments, every
//! estimate kept.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionSpace, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::estimators::{gae_truncated, value_targets, BootstrapMode, EstimatorParams, NORMALIZE_EPS};
use crate::math::{exp, mean_std, sqrt};
use crate::nn::{Activation, AdamState, Mlp, Policy};
use crate::oracle::rollout_rng;
use crate::trajectory::{split_partial, Action, ActorBuffer, AdvantageBatch, Segment, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Segment length `T`.
    pub sample_length: usize,
    /// Partial coefficient `ε`: estimates kept from each unterminated segment.
    pub partial_coef: usize,
    /// `false` runs plain PPO and ignores `partial_coef`.
    pub partial_gae: bool,
    pub clip_coef: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub n_actors: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub total_env_steps: u64,
    pub bootstrap_mode: BootstrapMode,
    pub normalize_advantages: bool,
    pub value_clip: bool,
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            sample_length: 128,
            partial_coef: 64,
            partial_gae: true,
            clip_coef: 0.2,
            value_coef: 1.0,
            entropy_coef: 0.01,
            learning_rate: AdamState::DEFAULT_LR,
            n_actors: 64,
            epochs: 2,
            minibatch_size: 256,
            total_env_steps: 300_000,
            bootstrap_mode: BootstrapMode::ZeroAtTruncation,
            normalize_advantages: false,
            value_clip: false,
            seed: 0,
            hidden_sizes: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

impl TrainerConfig {
    pub fn estimator_params(&self) -> Result<EstimatorParams> {
        EstimatorParams::new(self.gamma, self.lambda, self.bootstrap_mode)
    }

    /// Number of estimates kept from an unterminated segment.
    pub fn effective_partial_coef(&self) -> usize {
        if self.partial_gae {
            self.partial_coef
        } else {
            self.sample_length
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator_params()?;
        let positive = [
            ("sample_length", self.sample_length),
            ("n_actors", self.n_actors),
            ("epochs", self.epochs),
            ("minibatch_size", self.minibatch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.partial_gae && (self.partial_coef == 0 || self.partial_coef > self.sample_length) {
            return Err(Error::Config(format!(
                "partial_coef must satisfy 1 <= epsilon <= T, got epsilon = {} and T = {}",
                self.partial_coef, self.sample_length
            )));
        }
        if !(self.clip_coef > 0.0 && self.clip_coef.is_finite()) {
            return Err(Error::Config(format!("clip_coef must be positive, got {}", self.clip_coef)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, v) in [("value_coef", self.value_coef), ("entropy_coef", self.entropy_coef)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// `−min(ρA, clip(ρ, 1−c, 1+c)·A)` with `ρ = exp(logp_new − logp_old)`.
pub fn clipped_surrogate(logp_new: f64, logp_old: f64, advantage: f64, clip_coef: f64) -> f64 {
    let ratio = exp(logp_new - logp_old);
    let clipped = ratio.clamp(1.0 - clip_coef, 1.0 + clip_coef);
    -(ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to `logp_new`.
fn clipped_surrogate_grad(logp_new: f64, logp_old: f64, advantage: f64, clip_coef: f64) -> f64 {
    let ratio = exp(logp_new - logp_old);
    let clipped = ratio.clamp(1.0 - clip_coef, 1.0 + clip_coef);
    if ratio * advantage <= clipped * advantage {
        -ratio * advantage
    } else {
        0.0
    }
}

fn value_loss_term(v_new: f64, v_old: f64, target: f64, clip_coef: f64, value_clip: bool) -> (f64, f64) {
    let plain = (v_new - target) * (v_new - target);
    if !value_clip {
        return (plain, 2.0 * (v_new - target));
    }
    let v_clipped = v_old + (v_new - v_old).clamp(-clip_coef, clip_coef);
    let clipped = (v_clipped - target) * (v_clipped - target);
    if plain >= clipped {
        (plain, 2.0 * (v_new - target))
    } else if (v_new - v_old).abs() < clip_coef {
        (clipped, 2.0 * (v_clipped - target))
    } else {
        (clipped, 0.0)
    }
}

/// Mean squared error, or with `value_clip` the mean of
/// `max((v − y)², (v_old + clip(v − v_old, −c, c) − y)²)`.
pub fn value_loss(v_new: &[f64], v_old: &[f64], target: &[f64], clip_coef: f64, value_clip: bool) -> Result<f64> {
    if v_old.len() != v_new.len() || target.len() != v_new.len() {
        return Err(Error::Shape {
            expected: v_new.len(),
            found: if v_old.len() != v_new.len() { v_old.len() } else { target.len() },
        });
    }
    if v_new.is_empty() {
        return Err(Error::Empty);
    }
    let sum: f64 = v_new
        .iter()
        .zip(v_old)
        .zip(target)
        .map(|((v, o), y)| value_loss_term(*v, *o, *y, clip_coef, value_clip).0)
        .sum();
    Ok(sum / v_new.len() as f64)
}

/// One kept estimate, ready for the update phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub observation: Vec<f64>,
    pub action: Action,
    pub behavior_logprob: f64,
    pub value_pred: f64,
    pub advantage: f64,
    pub value_target: f64,
}

/// Truncated GAE, value targets and keep mask for one segment.
pub fn segment_advantages(segment: &Segment, params: &EstimatorParams, keep_mask: Vec<bool>) -> Result<AdvantageBatch> {
    let columns = segment.columns();
    let advantages = gae_truncated(&columns.trace(), params)?;
    let value_targets = value_targets(&advantages, &columns.values)?;
    if keep_mask.len() != segment.len() {
        return Err(Error::Shape {
            expected: segment.len(),
            found: keep_mask.len(),
        });
    }
    Ok(AdvantageBatch {
        t_index: (1..=segment.len()).collect(),
        advantages,
        value_targets,
        keep_mask,
    })
}

/// Kept entries of every segment, in actor order then time order.
pub fn assemble_kept(segments: &[Segment], batches: &[AdvantageBatch]) -> Result<Vec<TrainingSample>> {
    if segments.len() != batches.len() {
        return Err(Error::Shape {
            expected: segments.len(),
            found: batches.len(),
        });
    }
    let mut out = Vec::new();
    for (seg, batch) in segments.iter().zip(batches) {
        for (i, tr) in seg.transitions.iter().enumerate() {
            if batch.keep_mask[i] {
                out.push(TrainingSample {
                    observation: tr.observation.clone(),
                    action: tr.action.clone(),
                    behavior_logprob: tr.behavior_logprob,
                    value_pred: tr.value_pred,
                    advantage: batch.advantages[i],
                    value_target: batch.value_targets[i],
                });
            }
        }
    }
    Ok(out)
}

/// Loss terms of one minibatch, averaged over its entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Loss coefficients used by [`loss_and_grad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip_coef: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub value_clip: bool,
}

impl From<&TrainerConfig> for LossCoefs {
    fn from(c: &TrainerConfig) -> Self {
        Self {
            clip_coef: c.clip_coef,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
            value_clip: c.value_clip,
        }
    }
}

/// `surrogate + value_coef · value_loss − entropy_coef · entropy` on a
/// minibatch, with its gradients for the policy (body then log-std) and the
/// value network. `advantages` are the values fed to the surrogate and may be
/// normalized; value targets come from the samples.
pub fn loss_and_grad(
    policy: &Policy,
    value_net: &Mlp,
    batch: &[&TrainingSample],
    advantages: &[f64],
    coefs: &LossCoefs,
) -> Result<(LossStats, Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty);
    }
    if advantages.len() != batch.len() {
        return Err(Error::Shape {
            expected: batch.len(),
            found: advantages.len(),
        });
    }
    let m = batch.len() as f64;
    let mut policy_grads = vec![0.0; policy.param_count()];
    let mut value_grads = vec![0.0; value_net.param_count()];
    let mut stats = LossStats::default();
    for (s, adv) in batch.iter().zip(advantages) {
        let logp = policy.log_prob(&s.observation, &s.action)?;
        let d_logp = clipped_surrogate_grad(logp, s.behavior_logprob, *adv, coefs.clip_coef) / m;
        let (_, entropy) =
            policy.accumulate_grad(&s.observation, &s.action, d_logp, -coefs.entropy_coef / m, &mut policy_grads)?;
        stats.policy_loss += clipped_surrogate(logp, s.behavior_logprob, *adv, coefs.clip_coef) / m;
        stats.entropy += entropy / m;

        let cache = value_net.forward_cached(&s.observation)?;
        let v = cache.output()[0];
        let (loss, d_v) = value_loss_term(v, s.value_pred, s.value_target, coefs.clip_coef, coefs.value_clip);
        stats.value_loss += loss / m;
        value_net.backward(&cache, &[coefs.value_coef * d_v / m], &mut value_grads)?;
    }
    stats.total = stats.policy_loss + coefs.value_coef * stats.value_loss - coefs.entropy_coef * stats.entropy;
    Ok((stats, policy_grads, value_grads))
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub env_steps: u64,
    pub wall_clock_s: f64,
    /// Mean return of the last 100 completed episodes (0 before the first).
    pub mean_return_100: f64,
    pub success_rate_100: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Statistics of the kept advantages before any normalization.
    pub adv_mean: f64,
    pub adv_std: f64,
    pub kept_fraction: f64,
}

impl IterationRecord {
    pub const COLUMNS: [&'static str; 11] = [
        "iteration",
        "env_steps",
        "wall_clock_s",
        "mean_return_100",
        "success_rate_100",
        "policy_loss",
        "value_loss",
        "entropy",
        "adv_mean",
        "adv_std",
        "kept_fraction",
    ];
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<IterationRecord>,
}

const EPISODE_WINDOW: usize = 100;
const POLICY_OUTPUT_SCALE: f64 = 0.01;

/// splitmix64 finalizer, used to derive reset seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Reset seed of episode `episode` for actor `actor`.
pub fn episode_seed(seed: u64, actor: usize, episode: u64) -> u64 {
    mix(mix(seed ^ mix(actor as u64)) ^ episode)
}

/// Clamp continuous actions into the `[-1, 1]` box the environments accept.
/// The unclamped sample is what the log-probability refers to.
pub fn env_action(action: &Action) -> Action {
    match action {
        Action::Discrete(a) => Action::Discrete(*a),
        Action::Continuous(v) => Action::Continuous(v.iter().map(|x| x.clamp(-1.0, 1.0)).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ActorState<E> {
    env: E,
    observation: Vec<f64>,
    rng: ChaCha8Rng,
    buffer: ActorBuffer,
    episode_return: f64,
    episodes_started: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct EpisodeOutcome {
    total_return: f64,
    success: bool,
}

/// Full trainer state. Serializing it between iterations and resuming gives
/// the same run as never stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer<E> {
    config: TrainerConfig,
    spec: EnvSpec,
    policy: Policy,
    value_net: Mlp,
    policy_adam: AdamState,
    value_adam: AdamState,
    actors: Vec<ActorState<E>>,
    shuffle_rng: ChaCha8Rng,
    recent: VecDeque<EpisodeOutcome>,
    env_steps: u64,
    iteration: u64,
    log: RunLog,
}

/// Summary of one update phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub minibatches: usize,
}

impl<E: Environment> Trainer<E> {
    pub fn new<F: FnMut(usize) -> E>(config: TrainerConfig, mut env_factory: F) -> Result<Self> {
        config.validate()?;
        let mut envs: Vec<E> = (0..config.n_actors).map(&mut env_factory).collect();
        let spec = envs[0].spec();
        if envs.iter().any(|e| e.spec() != spec) {
            return Err(Error::Config("all actors need the same environment spec".into()));
        }
        let mut init_rng = rollout_rng(config.seed, 0);
        let policy = Policy::new(
            spec.observation_dim,
            &config.hidden_sizes,
            config.activation,
            spec.action_space,
            POLICY_OUTPUT_SCALE,
            &mut init_rng,
        )?;
        let mut sizes = vec![spec.observation_dim];
        sizes.extend_from_slice(&config.hidden_sizes);
        sizes.push(1);
        let value_net = Mlp::new(&sizes, config.activation, &mut init_rng)?;
        let actors = envs
            .drain(..)
            .enumerate()
            .map(|(i, mut env)| {
                let observation = env.reset(episode_seed(config.seed, i, 0));
                ActorState {
                    env,
                    observation,
                    rng: rollout_rng(config.seed, 2 + i as u64),
                    buffer: ActorBuffer::new(i, config.sample_length),
                    episode_return: 0.0,
                    episodes_started: 1,
                }
            })
            .collect();
        Ok(Self {
            policy_adam: AdamState::new(policy.param_count(), config.learning_rate),
            value_adam: AdamState::new(value_net.param_count(), config.learning_rate),
            shuffle_rng: rollout_rng(config.seed, 1),
            config,
            spec,
            policy,
            value_net,
            actors,
            recent: VecDeque::with_capacity(EPISODE_WINDOW),
            env_steps: 0,
            iteration: 0,
            log: RunLog::default(),
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn spec(&self) -> EnvSpec {
        self.spec
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn value_net(&self) -> &Mlp {
        &self.value_net
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.env_steps >= self.config.total_env_steps
    }

    /// Transitions currently waiting in each actor's buffer (the carried tails).
    pub fn carried_counts(&self) -> Vec<usize> {
        self.actors.iter().map(|a| a.buffer.len()).collect()
    }

    pub fn value(&self, observation: &[f64]) -> Result<f64> {
        Ok(self.value_net.forward(observation)?[0])
    }

    /// Fill every actor's segment up to `T` and return the segments.
    pub fn collect_segments(&mut self) -> Result<Vec<Segment>> {
        let mut segments = Vec::with_capacity(self.actors.len());
        for actor in &mut self.actors {
            let value_net = &self.value_net;
            let value = |obs: &[f64]| -> Result<f64> { Ok(value_net.forward(obs)?[0]) };
            if self.config.partial_gae {
                actor.buffer.refresh_values(value)?;
            }
            while !actor.buffer.is_full() {
                let (action, logp) = self.policy.sample_action(&actor.observation, &mut actor.rng)?;
                let value_pred = value(&actor.observation)?;
                let step = actor.env.step(&env_action(&action))?;
                self.env_steps += 1;
                actor.episode_return += step.reward;
                let observation = core::mem::replace(&mut actor.observation, step.observation);
                actor.buffer.push(Transition {
                    observation,
                    action,
                    reward: step.reward,
                    done: step.done,
                    value_pred,
                    behavior_logprob: logp,
                })?;
                if step.done {
                    if self.recent.len() == EPISODE_WINDOW {
                        self.recent.pop_front();
                    }
                    self.recent.push_back(EpisodeOutcome {
                        total_return: actor.episode_return,
                        success: step.success,
                    });
                    actor.episode_return = 0.0;
                    actor.observation = actor.env.reset(episode_seed(
                        self.config.seed,
                        actor.buffer.actor_id(),
                        actor.episodes_started,
                    ));
                    actor.episodes_started += 1;
                }
            }
            let bootstrap = value(&actor.observation)?;
            segments.push(actor.buffer.finalize(actor.observation.clone(), bootstrap)?);
        }
        Ok(segments)
    }

    /// Advantages for fresh segments with every estimate kept.
    fn baseline_batches(&self, segments: &[Segment]) -> Result<Vec<AdvantageBatch>> {
        let params = self.config.estimator_params()?;
        segments
            .iter()
            .map(|seg| segment_advantages(seg, &params, vec![true; seg.len()]))
            .collect()
    }

    /// Advantages with the partial keep mask; discarded tails go back into
    /// the actor buffers.
    fn partial_batches(&mut self, segments: &[Segment]) -> Result<Vec<AdvantageBatch>> {
        let params = self.config.estimator_params()?;
        let mut batches = Vec::with_capacity(segments.len());
        for (seg, actor) in segments.iter().zip(&mut self.actors) {
            let (mask, tail) = split_partial(seg, self.config.partial_coef)?;
            actor.buffer.carryover(tail)?;
            batches.push(segment_advantages(seg, &params, mask)?);
        }
        Ok(batches)
    }

    /// K epochs of shuffled minibatch Adam over the kept samples.
    pub fn update(&mut self, samples: &[TrainingSample]) -> Result<UpdateStats> {
        if samples.is_empty() {
            return Err(Error::Empty);
        }
        let mut advantages: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        if self.config.normalize_advantages {
            let (mean, std) = mean_std(advantages.iter().copied());
            for a in &mut advantages {
                *a = (*a - mean) / (std + NORMALIZE_EPS);
            }
        }
        let coefs = LossCoefs::from(&self.config);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut stats = UpdateStats::default();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(self.config.minibatch_size) {
                let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
                let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                let (loss, pg, vg) = loss_and_grad(&self.policy, &self.value_net, &batch, &adv, &coefs)?;
                self.policy.apply(&mut self.policy_adam, &pg)?;
                self.value_adam.step(self.value_net.params_mut(), &vg)?;
                stats.policy_loss += loss.policy_loss;
                stats.value_loss += loss.value_loss;
                stats.entropy += loss.entropy;
                stats.minibatches += 1;
            }
        }
        let n = stats.minibatches as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        Ok(stats)
    }

    fn iterate_inner(&mut self, wall_clock: &mut dyn FnMut() -> f64) -> Result<IterationRecord> {
        let segments = self.collect_segments()?;
        let batches = if self.config.partial_gae {
            self.partial_batches(&segments)?
        } else {
            self.baseline_batches(&segments)?
        };
        let samples = assemble_kept(&segments, &batches)?;
        let total: usize = segments.iter().map(Segment::len).sum();
        let (adv_mean, adv_std) = mean_std(samples.iter().map(|s| s.advantage));
        let update = self.update(&samples)?;
        self.iteration += 1;
        let n_recent = self.recent.len();
        let (mean_return_100, success_rate_100) = if n_recent == 0 {
            (0.0, 0.0)
        } else {
            (
                self.recent.iter().map(|e| e.total_return).sum::<f64>() / n_recent as f64,
                self.recent.iter().filter(|e| e.success).count() as f64 / n_recent as f64,
            )
        };
        let record = IterationRecord {
            iteration: self.iteration,
            env_steps: self.env_steps,
            wall_clock_s: wall_clock(),
            mean_return_100,
            success_rate_100,
            policy_loss: update.policy_loss,
            value_loss: update.value_loss,
            entropy: update.entropy,
            adv_mean,
            adv_std,
            kept_fraction: samples.len() as f64 / total as f64,
        };
        self.log.records.push(record);
        Ok(record)
    }

    /// Collect, estimate, split, update; appends and returns the log record.
    /// `wall_clock` reports elapsed seconds for the record.
    pub fn iterate(&mut self, wall_clock: &mut dyn FnMut() -> f64) -> Result<IterationRecord> {
        let iteration = self.iteration + 1;
        self.iterate_inner(wall_clock).map_err(|e| Error::Iteration {
            iteration,
            source: alloc::boxed::Box::new(e),
        })
    }

    /// Iterate until the environment-step budget is spent.
    pub fn run(&mut self, wall_clock: &mut dyn FnMut() -> f64) -> Result<&RunLog> {
        while !self.is_done() {
            self.iterate(wall_clock)?;
        }
        Ok(&self.log)
    }
}

/// Train from scratch until the budget is spent. Wall-clock entries are 0.
pub fn train<E: Environment, F: FnMut(usize) -> E>(config: TrainerConfig, env_factory: F) -> Result<RunLog> {
    let mut trainer = Trainer::new(config, env_factory)?;
    trainer.run(&mut || 0.0)?;
    Ok(trainer.log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Run `n_episodes` full episodes; episode `k` resets with a seed derived
/// from `seed` and `k`.
pub fn evaluate<E: Environment>(
    policy: &Policy,
    env: &mut E,
    n_episodes: usize,
    seed: u64,
    mode: EvalMode,
) -> Result<Evaluation> {
    if n_episodes == 0 {
        return Err(Error::Precondition("evaluation needs at least one episode"));
    }
    let spec = env.spec();
    let matches = match (spec.action_space, &policy.head) {
        (ActionSpace::Discrete(n), crate::nn::PolicyHead::Categorical { n_actions }) => n == *n_actions,
        (ActionSpace::Continuous(d), crate::nn::PolicyHead::Gaussian { log_std }) => d == log_std.len(),
        _ => false,
    };
    if !matches || policy.body.input_dim() != spec.observation_dim {
        return Err(Error::Config("policy does not fit the environment".into()));
    }
    let mut rng = rollout_rng(seed, u64::MAX);
    let mut total = 0.0;
    let mut successes = 0usize;
    for k in 0..n_episodes {
        let mut obs = env.reset(episode_seed(seed, usize::MAX, k as u64));
        loop {
            let action = match mode {
                EvalMode::Greedy => policy.greedy_action(&obs)?,
                EvalMode::Sample => policy.sample_action(&obs, &mut rng)?.0,
            };
            let step = env.step(&env_action(&action))?;
            total += step.reward;
            obs = step.observation;
            if step.done {
                successes += usize::from(step.success);
                break;
            }
        }
    }
    Ok(Evaluation {
        episodes: n_episodes,
        mean_return: total / n_episodes as f64,
        success_rate: successes as f64 / n_episodes as f64,
    })
}

/// Pooled within-group standard deviation (groups with fewer than two
/// values are skipped).
pub fn pooled_std(groups: &[&[f64]]) -> f64 {
    let mut ss = 0.0;
    let mut dof = 0usize;
    for g in groups {
        if g.len() < 2 {
            continue;
        }
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ss += g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
        dof += g.len() - 1;
    }
    if dof == 0 {
        0.0
    } else {
        sqrt(ss / dof as f64)
    }
}
