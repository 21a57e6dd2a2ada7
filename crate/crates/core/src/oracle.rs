//! Exact tabular ground truth for measuring estimator bias and variance.
//!
//! A [`TabularMdp`] with a fixed [`TabularPolicy`] has closed-form state
//! values and advantages. [`estimator_study`] samples segments under the
//! policy, runs truncated GAE on them with an arbitrary value table, and
//! reports per-position statistics against the exact advantage.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{decompose, gae_truncated, EstimatorParams, Trace};
use crate::math::{ln, sqrt};

const PROB_TOL: f64 = 1e-12;
/// Largest state count solved by dense LU; larger MDPs use iterative sweeps.
pub const DENSE_SOLVE_LIMIT: usize = 64;

/// A finite MDP with deterministic rewards `r(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `[state][action][next_state]`, flattened.
    transition: Vec<f64>,
    /// `[state][action]`, flattened.
    reward: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
    initial: Vec<f64>,
}

fn check_distribution(row: &[f64], what: &'static str) -> Result<()> {
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::Config(alloc::format!("{what}: negative or non-finite probability")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::Config(alloc::format!("{what}: probabilities sum to {sum}")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        terminal: Vec<bool>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("MDP needs at least one state and one action".into()));
        }
        let sa = n_states * n_actions;
        for (len, expected) in [
            (transition.len(), sa * n_states),
            (reward.len(), sa),
            (terminal.len(), n_states),
            (initial.len(), n_states),
        ] {
            if len != expected {
                return Err(Error::Shape { expected, found: len });
            }
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(alloc::format!("gamma must be in (0, 1], got {gamma}")));
        }
        for row in transition.chunks(n_states) {
            check_distribution(row, "transition row")?;
        }
        check_distribution(&initial, "initial distribution")?;
        for s in 0..n_states {
            if terminal[s] {
                if initial[s] > 0.0 {
                    return Err(Error::Config("initial distribution puts mass on a terminal state".into()));
                }
                for a in 0..n_actions {
                    let p_stay = transition[(s * n_actions + a) * n_states + s];
                    if (p_stay - 1.0).abs() > PROB_TOL || reward[s * n_actions + a] != 0.0 {
                        return Err(Error::Config(
                            "terminal states must self-loop with zero reward".into(),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            terminal,
            initial,
        })
    }

    /// `n` non-terminal states in a line plus one absorbing terminal state
    /// (index `n`). Action 0 moves left (staying put at the left end), action 1
    /// moves right; moving right from the last state pays 1 and terminates.
    pub fn terminating_chain(n: usize, gamma: f64) -> Result<Self> {
        let ns = n + 1;
        let mut transition = vec![0.0; ns * 2 * ns];
        let mut reward = vec![0.0; ns * 2];
        for s in 0..n {
            transition[(s * 2) * ns + s.saturating_sub(1)] = 1.0;
            transition[(s * 2 + 1) * ns + s + 1] = 1.0;
        }
        reward[(n - 1) * 2 + 1] = 1.0;
        transition[(n * 2) * ns + n] = 1.0;
        transition[(n * 2 + 1) * ns + n] = 1.0;
        let mut terminal = vec![false; ns];
        terminal[n] = true;
        let mut initial = vec![0.0; ns];
        initial[0] = 1.0;
        Self::new(ns, 2, transition, reward, gamma, terminal, initial)
    }

    /// A line of `n` states with an exit at each end (terminal states `n` and
    /// `n + 1`). Leaving left from state 0 pays `left_reward`, leaving right
    /// from state `n − 1` pays `right_reward`. With probability `slip` a move
    /// goes the opposite way. Episodes start in the middle state.
    pub fn two_exit_chain(n: usize, left_reward: f64, right_reward: f64, slip: f64, gamma: f64) -> Result<Self> {
        let ns = n + 2;
        let (left_exit, right_exit) = (n, n + 1);
        let mut transition = vec![0.0; ns * 2 * ns];
        let mut reward = vec![0.0; ns * 2];
        let dest = |s: usize, dir: i64| -> usize {
            let target = s as i64 + dir;
            if target < 0 {
                left_exit
            } else if target as usize >= n {
                right_exit
            } else {
                target as usize
            }
        };
        let exit_reward = |to: usize| {
            if to == left_exit {
                left_reward
            } else if to == right_exit {
                right_reward
            } else {
                0.0
            }
        };
        for s in 0..n {
            for (a, dir) in [(0usize, -1i64), (1, 1)] {
                let intended = dest(s, dir);
                let slipped = dest(s, -dir);
                let base = (s * 2 + a) * ns;
                transition[base + intended] += 1.0 - slip;
                transition[base + slipped] += slip;
                reward[s * 2 + a] = (1.0 - slip) * exit_reward(intended) + slip * exit_reward(slipped);
            }
        }
        for t in [left_exit, right_exit] {
            transition[(t * 2) * ns + t] = 1.0;
            transition[(t * 2 + 1) * ns + t] = 1.0;
        }
        let mut terminal = vec![false; ns];
        terminal[left_exit] = true;
        terminal[right_exit] = true;
        let mut initial = vec![0.0; ns];
        initial[n / 2] = 1.0;
        Self::new(ns, 2, transition, reward, gamma, terminal, initial)
    }

    /// A continuing ring of `n` states with no terminal state. Action 1 moves
    /// right, action 0 moves left, each slipping the other way with
    /// probability `slip`. Moving right off the last state pays 1 and wraps to
    /// state 0. Episodes start uniformly.
    pub fn cyclic_chain(n: usize, slip: f64, gamma: f64) -> Result<Self> {
        let mut transition = vec![0.0; n * 2 * n];
        let mut reward = vec![0.0; n * 2];
        let right = |s: usize| (s + 1) % n;
        let left = |s: usize| if s == 0 { 0 } else { s - 1 };
        for s in 0..n {
            let pays = if s == n - 1 { 1.0 } else { 0.0 };
            let base_left = (s * 2) * n;
            transition[base_left + left(s)] += 1.0 - slip;
            transition[base_left + right(s)] += slip;
            reward[s * 2] = slip * pays;
            let base_right = (s * 2 + 1) * n;
            transition[base_right + right(s)] += 1.0 - slip;
            transition[base_right + left(s)] += slip;
            reward[s * 2 + 1] = (1.0 - slip) * pays;
        }
        let initial = vec![1.0 / n as f64; n];
        Self::new(n, 2, transition, reward, gamma, vec![false; n], initial)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.n_actions + action]
    }

    /// `P(· | state, action)`.
    pub fn next_distribution(&self, state: usize, action: usize) -> &[f64] {
        let base = (state * self.n_actions + action) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// Same MDP with a different start distribution.
    pub fn with_initial(mut self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.n_states {
            return Err(Error::Shape {
                expected: self.n_states,
                found: initial.len(),
            });
        }
        check_distribution(&initial, "initial distribution")?;
        self.initial = initial;
        Ok(self)
    }
}

/// `π(a | s)` as a row-stochastic matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Shape {
                expected: n_states * n_actions,
                found: probs.len(),
            });
        }
        for row in probs.chunks(n_actions) {
            check_distribution(row, "policy row")?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Range {
                    what: "actions",
                    index: a,
                    len: n_actions,
                });
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    pub fn probs(&self, state: usize) -> &[f64] {
        &self.probs[state * self.n_actions..(state + 1) * self.n_actions]
    }

    fn check_against(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::Shape {
                expected: mdp.n_states * mdp.n_actions,
                found: self.n_states * self.n_actions,
            });
        }
        Ok(())
    }
}

/// Draw an index from a probability row.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` above the cumulative sum: take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Policy-averaged reward and transition matrix.
fn policy_dynamics(mdp: &TabularMdp, policy: &TabularPolicy) -> (Vec<f64>, Vec<f64>) {
    let n = mdp.n_states;
    let mut r_pi = vec![0.0; n];
    let mut p_pi = vec![0.0; n * n];
    for s in 0..n {
        for (a, &pa) in policy.probs(s).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            r_pi[s] += pa * mdp.reward(s, a);
            for (s2, &p) in mdp.next_distribution(s, a).iter().enumerate() {
                p_pi[s * n + s2] += pa * p;
            }
        }
    }
    (r_pi, p_pi)
}

fn bellman_residual(mdp: &TabularMdp, r_pi: &[f64], p_pi: &[f64], v: &[f64]) -> f64 {
    let n = mdp.n_states;
    (0..n)
        .map(|s| {
            let backup = if mdp.terminal[s] {
                0.0
            } else {
                r_pi[s] + mdp.gamma * (0..n).map(|s2| p_pi[s * n + s2] * v[s2]).sum::<f64>()
            };
            (v[s] - backup).abs()
        })
        .fold(0.0, f64::max)
}

/// `V^π` from the Bellman linear system, with terminal states pinned to 0.
pub fn exact_state_values(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    policy.check_against(mdp)?;
    let n = mdp.n_states;
    let (r_pi, p_pi) = policy_dynamics(mdp, policy);
    let v = if n <= DENSE_SOLVE_LIMIT {
        let a = DMatrix::from_fn(n, n, |i, j| {
            let eye = if i == j { 1.0 } else { 0.0 };
            if mdp.terminal[i] {
                eye
            } else {
                eye - mdp.gamma * p_pi[i * n + j]
            }
        });
        let b = DVector::from_fn(n, |i, _| if mdp.terminal[i] { 0.0 } else { r_pi[i] });
        let lu = a.lu();
        let u = lu.u();
        let pivot_floor = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if !(pivot_floor > 1e-12) {
            return Err(Error::Singular);
        }
        let x = lu.solve(&b).ok_or(Error::Singular)?;
        x.iter().copied().collect::<Vec<f64>>()
    } else {
        gauss_seidel(mdp, &r_pi, &p_pi)?
    };
    if bellman_residual(mdp, &r_pi, &p_pi, &v) >= 1e-10 || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(v)
}

fn gauss_seidel(mdp: &TabularMdp, r_pi: &[f64], p_pi: &[f64]) -> Result<Vec<f64>> {
    let n = mdp.n_states;
    let mut v = vec![0.0; n];
    for _ in 0..1_000_000 {
        let mut change: f64 = 0.0;
        for s in 0..n {
            if mdp.terminal[s] {
                continue;
            }
            let self_loop = mdp.gamma * p_pi[s * n + s];
            if 1.0 - self_loop <= 1e-15 {
                return Err(Error::Singular);
            }
            let others: f64 = (0..n).filter(|&s2| s2 != s).map(|s2| p_pi[s * n + s2] * v[s2]).sum();
            let updated = (r_pi[s] + mdp.gamma * others) / (1.0 - self_loop);
            change = change.max((updated - v[s]).abs());
            v[s] = updated;
        }
        if change < 1e-13 {
            return Ok(v);
        }
    }
    Err(Error::Singular)
}

/// `Q(s, a) = r(s, a) + γ Σ P(s'|s,a) V(s')`.
pub fn action_values(mdp: &TabularMdp, values: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    if mdp.terminal[s] {
                        return 0.0;
                    }
                    let next: f64 = mdp
                        .next_distribution(s, a)
                        .iter()
                        .zip(values)
                        .map(|(p, v)| p * v)
                        .sum();
                    mdp.reward(s, a) + mdp.gamma * next
                })
                .collect()
        })
        .collect()
}

/// `A(s, a) = Q(s, a) − V(s)`, indexed `[state][action]`.
pub fn exact_advantage(mdp: &TabularMdp, policy: &TabularPolicy, values: &[f64]) -> Result<Vec<Vec<f64>>> {
    policy.check_against(mdp)?;
    if values.len() != mdp.n_states {
        return Err(Error::Shape {
            expected: mdp.n_states,
            found: values.len(),
        });
    }
    let q = action_values(mdp, values);
    Ok(q.into_iter()
        .enumerate()
        .map(|(s, row)| row.into_iter().map(|qa| qa - values[s]).collect())
        .collect())
}

/// Optimal values and a greedy optimal action per state by value iteration.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut v = vec![0.0; mdp.n_states];
    for _ in 0..1_000_000 {
        let q = action_values(mdp, &v);
        let next: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change < tol {
            let q = action_values(mdp, &v);
            let greedy = q
                .iter()
                .map(|row| {
                    let mut best = 0;
                    for a in 1..row.len() {
                        if row[a] > row[best] {
                            best = a;
                        }
                    }
                    best
                })
                .collect();
            return Ok((v, greedy));
        }
    }
    Err(Error::Precondition("value iteration did not converge"))
}

/// Stationary state distribution of the policy's Markov chain, by solving
/// `d (P^π − I) = 0` with `Σ d = 1`.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    policy.check_against(mdp)?;
    let n = mdp.n_states;
    let (_, p_pi) = policy_dynamics(mdp, policy);
    // Rows of the transposed system; the last equation is replaced by Σ d = 1.
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == n - 1 {
            1.0
        } else {
            p_pi[j * n + i] - if i == j { 1.0 } else { 0.0 }
        }
    });
    let b = DVector::from_fn(n, |i, _| if i == n - 1 { 1.0 } else { 0.0 });
    let x = a.lu().solve(&b).ok_or(Error::Singular)?;
    Ok(x.iter().copied().collect())
}

/// One sampled step of a tabular rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
}

/// Sample at most `max_steps` steps from the initial distribution, stopping
/// at a terminal state.
pub fn sample_rollout<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    max_steps: usize,
    rng: &mut R,
) -> Vec<TabularStep> {
    let mut state = sample_categorical(&mdp.initial, rng);
    let mut steps = Vec::with_capacity(max_steps);
    for _ in 0..max_steps {
        let action = sample_categorical(policy.probs(state), rng);
        let next_state = sample_categorical(mdp.next_distribution(state, action), rng);
        let done = mdp.terminal[next_state];
        steps.push(TabularStep {
            state,
            action,
            reward: mdp.reward(state, action),
            next_state,
            done,
        });
        if done {
            break;
        }
        state = next_state;
    }
    steps
}

/// RNG for rollout `index` of a study seeded with `seed`.
pub fn rollout_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Per-position statistics of truncated GAE. `t` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub t: usize,
    pub n: usize,
    pub mean_adv: f64,
    pub std_adv: f64,
    /// Mean of `Â_t − A(s_t, a_t)` over the visits at this position.
    pub bias: f64,
    /// Standard error of `bias`.
    #[serde(skip)]
    pub bias_std_err: f64,
    pub std_reward_part: f64,
    pub std_value_part: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn add(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.sum / self.n as f64
    }

    /// Population standard deviation.
    fn std(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        let mean = self.mean();
        sqrt((self.sum_sq / self.n as f64 - mean * mean).max(0.0))
    }

    fn std_err(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        self.std() * sqrt(1.0 / (self.n - 1) as f64)
    }
}

/// Per-position accumulator shared by the tabular study and the live
/// variance profiler.
#[derive(Debug, Clone)]
pub struct PositionStats {
    adv: Vec<Moments>,
    err: Vec<Moments>,
    reward_part: Vec<Moments>,
    value_part: Vec<Moments>,
}

impl PositionStats {
    pub fn new(positions: usize) -> Self {
        Self {
            adv: vec![Moments::default(); positions],
            err: vec![Moments::default(); positions],
            reward_part: vec![Moments::default(); positions],
            value_part: vec![Moments::default(); positions],
        }
    }

    /// Record the estimates at 0-based position `t`. `error` is the estimate
    /// minus ground truth, when ground truth exists.
    pub fn record(&mut self, t: usize, advantage: f64, error: Option<f64>, reward_part: f64, value_part: f64) {
        self.adv[t].add(advantage);
        if let Some(e) = error {
            self.err[t].add(e);
        }
        self.reward_part[t].add(reward_part);
        self.value_part[t].add(value_part);
    }

    pub fn table(&self) -> StudyTable {
        StudyTable {
            rows: (0..self.adv.len())
                .map(|t| StudyRow {
                    t: t + 1,
                    n: self.adv[t].n,
                    mean_adv: self.adv[t].mean(),
                    std_adv: self.adv[t].std(),
                    bias: self.err[t].mean(),
                    bias_std_err: self.err[t].std_err(),
                    std_reward_part: self.reward_part[t].std(),
                    std_value_part: self.value_part[t].std(),
                })
                .collect(),
        }
    }
}

/// Sample `n_rollouts` segments of up to `sample_length` steps under `policy`,
/// estimate truncated GAE with `value_table` standing in for `V`, and compare
/// each estimate with the exact advantage of the visited state-action pair.
///
/// Rollout `i` draws from its own stream derived from `(seed, i)`.
pub fn estimator_study(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    value_table: &[f64],
    params: &EstimatorParams,
    sample_length: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<StudyTable> {
    if n_rollouts < 100 {
        return Err(Error::Precondition("estimator study needs at least 100 rollouts"));
    }
    if sample_length == 0 {
        return Err(Error::Precondition("sample length must be positive"));
    }
    if value_table.len() != mdp.n_states {
        return Err(Error::Shape {
            expected: mdp.n_states,
            found: value_table.len(),
        });
    }
    let exact_v = exact_state_values(mdp, policy)?;
    let advantage = exact_advantage(mdp, policy, &exact_v)?;
    let mut stats = PositionStats::new(sample_length);
    let mut rewards = Vec::with_capacity(sample_length);
    let mut values = Vec::with_capacity(sample_length);
    let mut dones = Vec::with_capacity(sample_length);
    for i in 0..n_rollouts {
        let mut rng = rollout_rng(seed, i as u64);
        let steps = sample_rollout(mdp, policy, sample_length, &mut rng);
        rewards.clear();
        values.clear();
        dones.clear();
        for step in &steps {
            rewards.push(step.reward);
            values.push(value_table[step.state]);
            dones.push(step.done);
        }
        let last = steps.last().expect("at least one step per rollout");
        let bootstrap = if last.done { 0.0 } else { value_table[last.next_state] };
        let trace = Trace::new(&rewards, &values, &dones, bootstrap)?;
        let adv = gae_truncated(&trace, params)?;
        for (t, step) in steps.iter().enumerate() {
            let (rp, vp) = decompose(&trace, t, params)?;
            stats.record(t, adv[t], Some(adv[t] - advantage[step.state][step.action]), rp, vp);
        }
    }
    Ok(stats.table())
}

/// Least-squares slope of `ln|bias|` against the distance to the segment end
/// `T − t`, over positions whose bias is at least `min_snr` standard errors
/// away from zero. Truncation bias decays like `(γλ)^{T−t}`, so the slope
/// estimates `ln(γλ)`.
pub fn log_bias_slope(table: &StudyTable, min_snr: f64) -> Option<f64> {
    let horizon = table.rows.len() as f64;
    let points: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|row| row.n > 1 && row.bias.is_finite() && row.bias.abs() >= min_snr * row.bias_std_err)
        .filter(|row| row.bias != 0.0)
        .map(|row| (horizon - row.t as f64, ln(row.bias.abs())))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / sqrt(vx * vy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::BootstrapMode;

    #[test]
    fn validation_rejects_bad_rows() {
        let bad = TabularMdp::new(1, 1, vec![0.9], vec![0.0], 0.9, vec![false], vec![1.0]);
        assert!(bad.is_err());
        let neg = TabularMdp::new(2, 1, vec![1.5, -0.5, 0.0, 1.0], vec![0.0; 2], 0.9, vec![false; 2], vec![1.0, 0.0]);
        assert!(neg.is_err());
        let loud_terminal = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.9, vec![true], vec![1.0]);
        assert!(loud_terminal.is_err());
        assert!(TabularPolicy::new(1, 2, vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn one_step_episode() {
        let mdp = TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 0.0, 1.0],
            vec![1.0, 0.0],
            0.5,
            vec![false, true],
            vec![1.0, 0.0],
        )
        .unwrap();
        let v = exact_state_values(&mdp, &TabularPolicy::uniform(2, 1)).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn zero_reward_values_vanish() {
        let mdp = TabularMdp::two_exit_chain(5, 0.0, 0.0, 0.2, 0.9).unwrap();
        let pi = TabularPolicy::uniform(mdp.n_states(), 2);
        let v = exact_state_values(&mdp, &pi).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-14));
        let a = exact_advantage(&mdp, &pi, &v).unwrap();
        assert!(a.iter().flatten().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn chain_values_are_geometric() {
        let mdp = TabularMdp::terminating_chain(5, 0.9).unwrap();
        let pi = TabularPolicy::deterministic(2, &[1; 6]).unwrap();
        let v = exact_state_values(&mdp, &pi).unwrap();
        for i in 0..5 {
            let expected = (0..4 - i).fold(1.0, |acc, _| acc * 0.9);
            assert!((v[i] - expected).abs() < 1e-12, "state {i}: {} vs {expected}", v[i]);
        }
        assert_eq!(v[5], 0.0);
    }

    #[test]
    fn undiscounted_continuing_chain_is_singular() {
        let mdp = TabularMdp::cyclic_chain(4, 0.1, 1.0).unwrap();
        let pi = TabularPolicy::uniform(4, 2);
        assert_eq!(exact_state_values(&mdp, &pi), Err(Error::Singular));
    }

    #[test]
    fn iterative_solver_matches_dense() {
        let small = TabularMdp::cyclic_chain(40, 0.2, 0.9).unwrap();
        let big = TabularMdp::cyclic_chain(80, 0.2, 0.9).unwrap();
        let v_small = exact_state_values(&small, &TabularPolicy::uniform(40, 2)).unwrap();
        let v_big = exact_state_values(&big, &TabularPolicy::uniform(80, 2)).unwrap();
        let pi = TabularPolicy::uniform(80, 2);
        let (r, p) = policy_dynamics(&big, &pi);
        assert!(bellman_residual(&big, &r, &p, &v_big) < 1e-10);
        assert!(v_small.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn advantages_average_to_zero_under_policy() {
        let mdp = TabularMdp::two_exit_chain(5, 0.3, 1.0, 0.25, 0.9).unwrap();
        let probs: Vec<f64> = (0..mdp.n_states()).flat_map(|_| [0.35, 0.65]).collect();
        let pi = TabularPolicy::new(mdp.n_states(), 2, probs).unwrap();
        let v = exact_state_values(&mdp, &pi).unwrap();
        let a = exact_advantage(&mdp, &pi, &v).unwrap();
        for s in 0..mdp.n_states() {
            let mean: f64 = a[s].iter().zip(pi.probs(s)).map(|(x, p)| x * p).sum();
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn greedy_optimal_policy_has_zero_advantage() {
        let mdp = TabularMdp::two_exit_chain(5, 0.5, 1.0, 0.0, 0.8).unwrap();
        let (v_star, greedy) = value_iteration(&mdp, 1e-13).unwrap();
        // Leaving left from state 0 beats the four-step walk right.
        assert_eq!(&greedy[..5], &[0, 1, 1, 1, 1]);
        let pi = TabularPolicy::deterministic(2, &greedy).unwrap();
        let v = exact_state_values(&mdp, &pi).unwrap();
        for s in 0..mdp.n_states() {
            assert!((v[s] - v_star[s]).abs() < 1e-10);
        }
        let a = exact_advantage(&mdp, &pi, &v).unwrap();
        for s in 0..5 {
            assert!(a[s][greedy[s]].abs() < 1e-12);
        }
    }

    /// Monte-Carlo advantage: take `a` in `s`, then follow the policy to the end.
    #[test]
    fn advantage_matches_monte_carlo() {
        let mdp = TabularMdp::two_exit_chain(5, 0.3, 1.0, 0.2, 0.9).unwrap();
        let pi = TabularPolicy::uniform(mdp.n_states(), 2);
        let v = exact_state_values(&mdp, &pi).unwrap();
        let a = exact_advantage(&mdp, &pi, &v).unwrap();
        let start = 2;
        for action in 0..2 {
            let mut rng = rollout_rng(11, action as u64);
            let n = 100_000;
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..n {
                let mut s = start;
                let mut act = action;
                let mut discount = 1.0;
                let mut ret = 0.0;
                loop {
                    ret += discount * mdp.reward(s, act);
                    s = sample_categorical(mdp.next_distribution(s, act), &mut rng);
                    if mdp.is_terminal(s) {
                        break;
                    }
                    discount *= mdp.gamma();
                    act = sample_categorical(pi.probs(s), &mut rng);
                }
                let sample = ret - v[start];
                sum += sample;
                sum_sq += sample * sample;
            }
            let mean = sum / n as f64;
            let se = sqrt((sum_sq / n as f64 - mean * mean) / n as f64);
            assert!((mean - a[start][action]).abs() < 3.0 * se, "action {action}: {mean} vs {}", a[start][action]);
        }
    }

    #[test]
    fn stationary_distribution_is_fixed_point() {
        let mdp = TabularMdp::cyclic_chain(5, 0.2, 0.9).unwrap();
        let probs: Vec<f64> = (0..5).flat_map(|_| [0.3, 0.7]).collect();
        let pi = TabularPolicy::new(5, 2, probs).unwrap();
        let d = stationary_distribution(&mdp, &pi).unwrap();
        let (_, p) = policy_dynamics(&mdp, &pi);
        for j in 0..5 {
            let next: f64 = (0..5).map(|i| d[i] * p[i * 5 + j]).sum();
            assert!((next - d[j]).abs() < 1e-12);
        }
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complete_episodes_with_exact_values_are_unbiased() {
        let mdp = TabularMdp::two_exit_chain(5, 0.3, 1.0, 0.2, 0.9).unwrap();
        let pi = TabularPolicy::uniform(mdp.n_states(), 2);
        let v = exact_state_values(&mdp, &pi).unwrap();
        let params = EstimatorParams::new(0.9, 1.0, BootstrapMode::ZeroAtTruncation).unwrap();
        // Long enough that no episode is cut.
        let table = estimator_study(&mdp, &pi, &v, &params, 400, 4000, 3).unwrap();
        let mut checked = 0;
        for row in table.rows.iter().filter(|r| r.n >= 30) {
            assert!(row.bias.abs() <= 3.0 * row.bias_std_err + 1e-12, "t={} bias={} se={}", row.t, row.bias, row.bias_std_err);
            checked += 1;
        }
        assert!(checked > 5);
        assert!(table.rows.last().unwrap().n == 0);
    }

    #[test]
    fn study_is_deterministic() {
        let mdp = TabularMdp::cyclic_chain(5, 0.2, 0.9).unwrap();
        let pi = TabularPolicy::uniform(5, 2);
        let v = exact_state_values(&mdp, &pi).unwrap();
        let params = EstimatorParams::new(0.9, 0.95, BootstrapMode::ZeroAtTruncation).unwrap();
        let a = estimator_study(&mdp, &pi, &v, &params, 16, 200, 9).unwrap();
        let b = estimator_study(&mdp, &pi, &v, &params, 16, 200, 9).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.bias.to_bits(), y.bias.to_bits());
            assert_eq!(x.std_adv.to_bits(), y.std_adv.to_bits());
        }
        assert!(estimator_study(&mdp, &pi, &v, &params, 16, 99, 9).is_err());
    }

    #[test]
    fn truncation_bias_decays_geometrically() {
        let mdp = TabularMdp::cyclic_chain(5, 0.2, 0.9).unwrap();
        let pi = TabularPolicy::uniform(5, 2);
        let v = exact_state_values(&mdp, &pi).unwrap();
        let params = EstimatorParams::new(0.9, 0.95, BootstrapMode::ZeroAtTruncation).unwrap();
        let table = estimator_study(&mdp, &pi, &v, &params, 16, 5000, 1).unwrap();
        let slope = log_bias_slope(&table, 4.0).unwrap();
        let expected = ln(0.9 * 0.95);
        assert!((slope - expected).abs() < 0.2 * expected.abs(), "slope {slope} vs {expected}");
    }

    #[test]
    fn constant_value_error_shifts_td_mean() {
        // Mean δ under V + e differs from mean δ under V by (γ − 1)e.
        let mdp = TabularMdp::cyclic_chain(5, 0.2, 0.9).unwrap();
        let pi = TabularPolicy::uniform(5, 2);
        let v = exact_state_values(&mdp, &pi).unwrap();
        let e = 0.7;
        let n = 20_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut rng = rollout_rng(5, 0);
        for _ in 0..n {
            let step = sample_rollout(&mdp, &pi, 1, &mut rng)[0];
            let exact = step.reward + 0.9 * v[step.next_state] - v[step.state];
            let shifted = step.reward + 0.9 * (v[step.next_state] + e) - (v[step.state] + e);
            let diff = shifted - exact;
            sum += diff;
            sum_sq += diff * diff;
        }
        let mean = sum / n as f64;
        let se = sqrt((sum_sq / n as f64 - mean * mean).max(0.0) / n as f64);
        assert!((mean - (0.9 - 1.0) * e).abs() <= 3.0 * se + 1e-12);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn categorical_sampler_frequencies() {
        let probs = [0.1, 0.0, 0.6, 0.3];
        let mut rng = rollout_rng(1, 1);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        let chi2: f64 = [0usize, 2, 3]
            .iter()
            .map(|&i| {
                let expected = probs[i] * n as f64;
                (counts[i] as f64 - expected).powi(2) / expected
            })
            .sum();
        // χ² quantile 0.999 at 2 degrees of freedom.
        assert!(chi2 < 13.816, "chi2 = {chi2}");
    }
}
