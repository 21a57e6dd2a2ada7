//! Return and advantage estimators over a fixed-length trace of steps.
//!
//! Indices are 0-based: step `t` of a trace of length `T` runs from `0` to
//! `T - 1`. A `done` flag at step `j` means the episode ended after step `j`;
//! nothing after `j` is bootstrapped into steps at or before `j`.
//!
//! Every estimator works per "episode chunk": the steps from `t` up to the
//! first terminal step at or after `t`, or to the end of the trace when the
//! episode is cut by the fixed sampling length.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{powi, sqrt};
use crate::trajectory::AdvantageBatch;

/// Stabilizer added to the standard deviation when normalizing advantages.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// What stands in for `V(s_{T+1})` when a segment ends without termination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    /// `δ_T = r_T + γ·0 − V(s_T)`.
    #[default]
    ZeroAtTruncation,
    /// `δ_T = r_T + γ·V(s_{T+1}) − V(s_T)` using the segment's bootstrap value.
    ValueAtTruncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    pub gamma: f64,
    pub lambda: f64,
    pub bootstrap: BootstrapMode,
}

impl EstimatorParams {
    pub fn new(gamma: f64, lambda: f64, bootstrap: BootstrapMode) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(alloc::format!("gamma must be in (0, 1], got {gamma}")));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(alloc::format!("lambda must be in [0, 1], got {lambda}")));
        }
        Ok(Self {
            gamma,
            lambda,
            bootstrap,
        })
    }

    /// The per-step decay `γλ` of the exponentially weighted sum.
    #[inline]
    pub fn decay(&self) -> f64 {
        self.gamma * self.lambda
    }

    pub fn with_bootstrap(mut self, bootstrap: BootstrapMode) -> Self {
        self.bootstrap = bootstrap;
        self
    }
}

/// A state-value function `V(s)`.
pub trait ValueFunction {
    fn evaluate(&self, observation: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> ValueFunction for F {
    fn evaluate(&self, observation: &[f64]) -> f64 {
        self(observation)
    }
}

/// Borrowed per-step rewards, value predictions and terminal flags of one
/// actor's segment, plus `V(s_{T+1})` for the observation after the last step.
#[derive(Debug, Clone, Copy)]
pub struct Trace<'a> {
    rewards: &'a [f64],
    values: &'a [f64],
    dones: &'a [bool],
    bootstrap_value: f64,
}

impl<'a> Trace<'a> {
    pub fn new(
        rewards: &'a [f64],
        values: &'a [f64],
        dones: &'a [bool],
        bootstrap_value: f64,
    ) -> Result<Self> {
        if values.len() != rewards.len() {
            return Err(Error::Shape {
                expected: rewards.len(),
                found: values.len(),
            });
        }
        if dones.len() != rewards.len() {
            return Err(Error::Shape {
                expected: rewards.len(),
                found: dones.len(),
            });
        }
        Ok(Self {
            rewards,
            values,
            dones,
            bootstrap_value,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn rewards(&self) -> &'a [f64] {
        self.rewards
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn dones(&self) -> &'a [bool] {
        self.dones
    }

    pub fn bootstrap_value(&self) -> f64 {
        self.bootstrap_value
    }

    /// Whether the last step is terminal.
    pub fn is_terminated(&self) -> bool {
        self.dones.last().copied().unwrap_or(false)
    }

    /// Last step of the episode chunk that contains `t`.
    pub fn episode_end(&self, t: usize) -> usize {
        self.dones[t..]
            .iter()
            .position(|&d| d)
            .map_or(self.len() - 1, |p| t + p)
    }

    /// The value standing in for the state after step `j`.
    pub fn value_after(&self, j: usize, mode: BootstrapMode) -> f64 {
        if self.dones[j] {
            0.0
        } else if j + 1 < self.len() {
            self.values[j + 1]
        } else {
            match mode {
                BootstrapMode::ZeroAtTruncation => 0.0,
                BootstrapMode::ValueAtTruncation => self.bootstrap_value,
            }
        }
    }

    /// TD residual at step `j`.
    #[inline]
    pub fn delta(&self, j: usize, params: &EstimatorParams) -> f64 {
        self.rewards[j] + params.gamma * self.value_after(j, params.bootstrap) - self.values[j]
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::Range {
                what: "trace",
                index: t,
                len: self.len(),
            });
        }
        Ok(())
    }
}

/// One-step TD residual `r + γ·V(s') − V(s)`, with `V(s') = 0` at a terminal.
#[inline]
pub fn td_delta(reward: f64, value: f64, value_next: f64, next_is_terminal: bool, gamma: f64) -> f64 {
    let next = if next_is_terminal { 0.0 } else { value_next };
    reward + gamma * next - value
}

/// All TD residuals of a trace.
pub fn td_residuals(trace: &Trace<'_>, params: &EstimatorParams) -> Vec<f64> {
    (0..trace.len()).map(|j| trace.delta(j, params)).collect()
}

/// The `n`-step return `G^(n)_t = Σ_{l<n} γ^l r_{t+l} + γ^n V(s_{t+n})`.
///
/// Terms past a terminal step are zero.
pub fn n_step_return(trace: &Trace<'_>, t: usize, n: usize, params: &EstimatorParams) -> Result<f64> {
    trace.check_index(t)?;
    if n == 0 || t + n > trace.len() {
        return Err(Error::Range {
            what: "n-step horizon",
            index: t + n,
            len: trace.len(),
        });
    }
    let last = (t + n - 1).min(trace.episode_end(t));
    let mut ret = 0.0;
    let mut discount = 1.0;
    for j in t..=last {
        ret += discount * trace.rewards[j];
        discount *= params.gamma;
    }
    Ok(ret + discount * trace.value_after(last, params.bootstrap))
}

/// `Â^(k)_t = −V(s_t) + γ^k V(s_{t+k}) + Σ_{l<k} γ^l r_{t+l}`, the sum of the
/// first `k` discounted TD residuals.
pub fn n_step_advantage(trace: &Trace<'_>, t: usize, k: usize, params: &EstimatorParams) -> Result<f64> {
    Ok(n_step_return(trace, t, k, params)? - trace.values[t])
}

/// Finite-horizon λ-return over the rest of the episode chunk:
/// `λ^{N−1} G^(N) + (1−λ) Σ_{n<N} λ^{n−1} G^(n)`.
pub fn lambda_return(trace: &Trace<'_>, t: usize, params: &EstimatorParams) -> Result<f64> {
    trace.check_index(t)?;
    let horizon = trace.episode_end(t) - t + 1;
    let lambda = params.lambda;
    let mut total = powi(lambda, horizon - 1) * n_step_return(trace, t, horizon, params)?;
    let mut weight = 1.0 - lambda;
    for n in 1..horizon {
        total += weight * n_step_return(trace, t, n, params)?;
        weight *= lambda;
    }
    Ok(total)
}

/// Truncated GAE by the backward recursion `Â_t = δ_t + γλ·Â_{t+1}`, reset at
/// every terminal step.
pub fn gae_truncated(trace: &Trace<'_>, params: &EstimatorParams) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::Range {
            what: "trace",
            index: 0,
            len: 0,
        });
    }
    let decay = params.decay();
    let mut advantages = vec![0.0; trace.len()];
    let mut running = 0.0;
    for j in (0..trace.len()).rev() {
        let carry = if trace.dones[j] { 0.0 } else { running };
        running = trace.delta(j, params) + decay * carry;
        advantages[j] = running;
    }
    Ok(advantages)
}

/// Truncated GAE as the explicit sum `Σ_{l=0}^{T−t} (γλ)^l δ_{t+l}` for every `t`.
///
/// Quadratic in the trace length; an independent route to [`gae_truncated`].
pub fn gae_direct_sum(trace: &Trace<'_>, params: &EstimatorParams) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::Range {
            what: "trace",
            index: 0,
            len: 0,
        });
    }
    let deltas = td_residuals(trace, params);
    let decay = params.decay();
    Ok((0..trace.len())
        .map(|t| {
            (t..=trace.episode_end(t))
                .map(|j| powi(decay, j - t) * deltas[j])
                .sum()
        })
        .collect())
}

/// Truncated GAE at `t` as exponentially weighted `k`-step advantages:
/// `(1−λ) Σ_{k=1}^{N−1} λ^{k−1} Â^(k)_t + λ^{N−1} Â^(N)_t` with `N` the number
/// of steps left in the episode chunk.
///
/// The last `k`-step term carries the remaining weight `λ^{N−1}`, as in the
/// finite λ-return, so the weights sum to one and `λ = 1` is well defined.
pub fn gae_exponential_form(trace: &Trace<'_>, t: usize, params: &EstimatorParams) -> Result<f64> {
    trace.check_index(t)?;
    let horizon = trace.episode_end(t) - t + 1;
    let lambda = params.lambda;
    let mut total = powi(lambda, horizon - 1) * n_step_advantage(trace, t, horizon, params)?;
    let mut weight = 1.0 - lambda;
    for k in 1..horizon {
        total += weight * n_step_advantage(trace, t, k, params)?;
        weight *= lambda;
    }
    Ok(total)
}

/// GAE over a complete trajectory ending in a terminal step.
pub fn gae_complete(trajectory: &Trace<'_>, params: &EstimatorParams) -> Result<Vec<f64>> {
    if !trajectory.is_terminated() {
        return Err(Error::Precondition("complete-trajectory GAE needs a terminal last step"));
    }
    gae_truncated(trajectory, &params.with_bootstrap(BootstrapMode::ZeroAtTruncation))
}

/// Difference between complete-trajectory GAE and GAE truncated to the first
/// `truncation_len` steps, at step `t`, as an explicit sum over the steps the
/// truncated estimate cannot see.
///
/// The truncated estimate replaces `δ_{T}` by its truncated form, so that one
/// term contributes only the difference of the two residuals.
pub fn bias_term(
    trajectory: &Trace<'_>,
    t: usize,
    truncation_len: usize,
    params: &EstimatorParams,
) -> Result<f64> {
    let len = trajectory.len();
    if !trajectory.is_terminated() || trajectory.dones[..len - 1].iter().any(|&d| d) {
        return Err(Error::Precondition(
            "bias term needs a single episode that terminates at its last step",
        ));
    }
    if truncation_len == 0 || truncation_len > len {
        return Err(Error::Range {
            what: "truncation length",
            index: truncation_len,
            len,
        });
    }
    if t >= truncation_len {
        return Err(Error::Range {
            what: "truncated segment",
            index: t,
            len: truncation_len,
        });
    }
    if truncation_len == len {
        return Ok(0.0);
    }
    let decay = params.decay();
    let last = truncation_len - 1;
    let truncated_next = match params.bootstrap {
        BootstrapMode::ZeroAtTruncation => 0.0,
        BootstrapMode::ValueAtTruncation => trajectory.values[truncation_len],
    };
    let boundary = params.gamma * (trajectory.values[truncation_len] - truncated_next);
    let mut total = powi(decay, last - t) * boundary;
    for j in truncation_len..len {
        total += powi(decay, j - t) * trajectory.delta(j, params);
    }
    Ok(total)
}

/// Split truncated GAE at `t` into the accumulated-reward part
/// `Σ (γλ)^l r_{t+l}` and the value-estimate part; the two sum to
/// [`gae_truncated`] at `t`.
pub fn decompose(trace: &Trace<'_>, t: usize, params: &EstimatorParams) -> Result<(f64, f64)> {
    trace.check_index(t)?;
    let end = trace.episode_end(t);
    let decay = params.decay();
    let mut reward_part = 0.0;
    let mut weight = 1.0;
    for j in t..=end {
        reward_part += weight * trace.rewards[j];
        weight *= decay;
    }
    let mut value_sum = 0.0;
    let mut weight = 1.0;
    for j in t..end {
        value_sum += weight * trace.values[j + 1];
        weight *= decay;
    }
    let value_part = -trace.values[t]
        + params.gamma * (1.0 - params.lambda) * value_sum
        + params.gamma * weight * trace.value_after(end, params.bootstrap);
    Ok((reward_part, value_part))
}

/// Normalize the entries selected by `mask` to zero mean and unit (population)
/// standard deviation. Unselected entries are left untouched.
pub fn normalize_masked(values: &mut [f64], mask: &[bool]) -> Result<()> {
    if mask.len() != values.len() {
        return Err(Error::Shape {
            expected: values.len(),
            found: mask.len(),
        });
    }
    let kept = || values.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v);
    let n = kept().count();
    if n == 0 {
        return Err(Error::Empty);
    }
    let mean = kept().sum::<f64>() / n as f64;
    let var = kept().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let scale = sqrt(var) + NORMALIZE_EPS;
    for (v, &m) in values.iter_mut().zip(mask) {
        if m {
            *v = (*v - mean) / scale;
        }
    }
    Ok(())
}

/// Copy of `batch` with kept advantages normalized; statistics use kept
/// entries only and value targets are not touched.
pub fn normalize_advantages(batch: &AdvantageBatch) -> Result<AdvantageBatch> {
    let mut out = batch.clone();
    normalize_masked(&mut out.advantages, &out.keep_mask)?;
    Ok(out)
}

/// Regression targets for the value function, `A_t + V(s_t)`.
pub fn value_targets(advantages: &[f64], value_preds: &[f64]) -> Result<Vec<f64>> {
    if advantages.len() != value_preds.len() {
        return Err(Error::Shape {
            expected: advantages.len(),
            found: value_preds.len(),
        });
    }
    Ok(advantages.iter().zip(value_preds).map(|(a, v)| a + v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(gamma: f64, lambda: f64) -> EstimatorParams {
        EstimatorParams::new(gamma, lambda, BootstrapMode::ZeroAtTruncation).unwrap()
    }

    /// Brute-force truncated GAE: TD residuals written out from the raw arrays,
    /// then the double sum stopping at the first terminal.
    fn oracle_gae(r: &[f64], v: &[f64], d: &[bool], boot: f64, p: &EstimatorParams) -> Vec<f64> {
        let n = r.len();
        let deltas: Vec<f64> = (0..n)
            .map(|j| {
                let next = if d[j] {
                    0.0
                } else if j + 1 < n {
                    v[j + 1]
                } else if p.bootstrap == BootstrapMode::ValueAtTruncation {
                    boot
                } else {
                    0.0
                };
                r[j] + p.gamma * next - v[j]
            })
            .collect();
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                let mut w = 1.0;
                for j in t..n {
                    total += w * deltas[j];
                    if d[j] {
                        break;
                    }
                    w *= p.gamma * p.lambda;
                }
                total
            })
            .collect()
    }

    #[test]
    fn td_delta_examples() {
        assert_eq!(td_delta(1.0, 0.0, 0.0, false, 0.99), 1.0);
        assert_eq!(td_delta(1.0, 2.0, 1.0, true, 0.99), -1.0);
        assert!((td_delta(0.5, 1.0, 2.0, false, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn params_are_validated() {
        assert!(EstimatorParams::new(0.0, 0.5, BootstrapMode::ZeroAtTruncation).is_err());
        assert!(EstimatorParams::new(1.1, 0.5, BootstrapMode::ZeroAtTruncation).is_err());
        assert!(EstimatorParams::new(0.9, -0.1, BootstrapMode::ZeroAtTruncation).is_err());
        assert!(EstimatorParams::new(1.0, 1.0, BootstrapMode::ValueAtTruncation).is_ok());
    }

    #[test]
    fn n_step_examples() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.4, -0.2, 0.7];
        let d = [false; 3];
        let tr = Trace::new(&r, &v, &d, 0.0).unwrap();
        let p = params(0.9, 0.5);
        assert_eq!(n_step_advantage(&tr, 1, 1, &p).unwrap(), tr.delta(1, &p));

        let ones = [1.0; 3];
        let zeros = [0.0; 3];
        let tr = Trace::new(&ones, &zeros, &d, 0.0).unwrap();
        assert_eq!(n_step_advantage(&tr, 0, 3, &params(1.0, 0.5)).unwrap(), 3.0);

        let halves = [0.5; 3];
        let tr = Trace::new(&ones, &halves, &d, 0.0).unwrap();
        let got = n_step_advantage(&tr, 0, 2, &params(0.5, 0.5)).unwrap();
        assert!((got - 1.125).abs() < 1e-12);
        assert!(n_step_advantage(&tr, 2, 2, &params(0.5, 0.5)).is_err());
        assert!(n_step_advantage(&tr, 0, 0, &params(0.5, 0.5)).is_err());
    }

    #[test]
    fn lambda_return_examples() {
        let r = [1.0, 0.5, -2.0];
        let v = [0.3, 0.8, 0.1];
        let d = [false; 3];
        let tr = Trace::new(&r, &v, &d, 0.0).unwrap();
        let p = params(0.9, 0.0);
        assert!((lambda_return(&tr, 0, &p).unwrap() - (1.0 + 0.9 * 0.8)).abs() < 1e-12);

        let zeros = [0.0; 3];
        let tr = Trace::new(&r, &zeros, &d, 0.0).unwrap();
        let mc = 1.0 + 0.9 * 0.5 + 0.81 * -2.0;
        assert!((lambda_return(&tr, 0, &params(0.9, 1.0)).unwrap() - mc).abs() < 1e-12);

        let ones = [1.0; 2];
        let zeros = [0.0; 2];
        let tr = Trace::new(&ones, &zeros, &[false; 2], 0.0).unwrap();
        assert!((lambda_return(&tr, 0, &params(0.5, 0.5)).unwrap() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn gae_truncated_examples() {
        let r = [1.0];
        let v = [0.25];
        let tr = Trace::new(&r, &v, &[false], 3.0).unwrap();
        let p = params(0.9, 0.95);
        assert_eq!(gae_truncated(&tr, &p).unwrap(), vec![tr.delta(0, &p)]);
        assert_eq!(tr.delta(0, &p), 0.75);

        let r = [0.3, -1.0, 2.0, 0.5];
        let v = [0.1, 0.2, -0.3, 0.4];
        let tr = Trace::new(&r, &v, &[false; 4], 1.0).unwrap();
        let p = params(0.9, 0.0);
        assert_eq!(gae_truncated(&tr, &p).unwrap(), td_residuals(&tr, &p));

        let ones = [1.0; 3];
        let zeros = [0.0; 3];
        let tr = Trace::new(&ones, &zeros, &[false; 3], 0.0).unwrap();
        let adv = gae_truncated(&tr, &params(0.5, 0.5)).unwrap();
        assert_eq!(adv, vec![1.3125, 1.25, 1.0]);

        let empty = Trace::new(&[], &[], &[], 0.0).unwrap();
        assert!(gae_truncated(&empty, &p).is_err());
    }

    #[test]
    fn bootstrap_modes_differ_only_at_truncation() {
        let r = [0.0, 0.0];
        let v = [0.0, 0.0];
        let d = [false, false];
        let tr = Trace::new(&r, &v, &d, 10.0).unwrap();
        let zero = params(0.5, 1.0);
        let value = zero.with_bootstrap(BootstrapMode::ValueAtTruncation);
        assert_eq!(gae_truncated(&tr, &zero).unwrap(), vec![0.0, 0.0]);
        assert_eq!(gae_truncated(&tr, &value).unwrap(), vec![2.5, 5.0]);
    }

    #[test]
    fn exponential_form_boundaries() {
        let r = [0.3, -1.0, 2.0];
        let v = [0.1, 0.2, -0.3];
        let tr = Trace::new(&r, &v, &[false; 3], 0.0).unwrap();
        let p = params(0.9, 0.0);
        assert!((gae_exponential_form(&tr, 0, &p).unwrap() - tr.delta(0, &p)).abs() < 1e-15);
        // With one step left the tail weight is λ^0 = 1.
        let p = params(0.9, 0.7);
        assert!((gae_exponential_form(&tr, 2, &p).unwrap() - tr.delta(2, &p)).abs() < 1e-15);
        let p1 = params(0.9, 1.0);
        let direct = gae_truncated(&tr, &p1).unwrap()[0];
        assert!((gae_exponential_form(&tr, 0, &p1).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn gae_complete_examples() {
        let tr = Trace::new(&[1.0], &[0.3], &[true], 0.0).unwrap();
        assert!((gae_complete(&tr, &params(0.9, 0.9)).unwrap()[0] - 0.7).abs() < 1e-15);

        let r = [0.0, 0.0, 1.0];
        let zeros = [0.0; 3];
        let d = [false, false, true];
        let tr = Trace::new(&r, &zeros, &d, 0.0).unwrap();
        assert_eq!(gae_complete(&tr, &params(1.0, 1.0)).unwrap(), vec![1.0, 1.0, 1.0]);

        let open = Trace::new(&r, &zeros, &[false; 3], 0.0).unwrap();
        assert!(matches!(gae_complete(&open, &params(1.0, 1.0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn bias_term_boundaries() {
        let r = [0.5, -0.2, 0.9, 0.1, 0.4];
        let v = [0.3, 0.1, -0.4, 0.2, 0.6];
        let d = [false, false, false, false, true];
        let tr = Trace::new(&r, &v, &d, 0.0).unwrap();
        let p = params(0.9, 0.8);
        for t in 0..5 {
            assert_eq!(bias_term(&tr, t, 5, &p).unwrap(), 0.0);
        }
        // t = T: difference between the full and the truncated estimate.
        let complete = gae_complete(&tr, &p).unwrap();
        let head = Trace::new(&r[..3], &v[..3], &d[..3], v[3]).unwrap();
        let truncated = gae_truncated(&head, &p).unwrap();
        let b_last = bias_term(&tr, 2, 3, &p).unwrap();
        assert!((b_last - (complete[2] - truncated[2])).abs() < 1e-12);
        assert!((bias_term(&tr, 0, 3, &p).unwrap() - 0.72 * 0.72 * b_last).abs() < 1e-12);

        assert!(bias_term(&tr, 3, 3, &p).is_err());
        assert!(bias_term(&tr, 0, 6, &p).is_err());
        let open = Trace::new(&r, &v, &[false; 5], 0.0).unwrap();
        assert!(bias_term(&open, 0, 3, &p).is_err());
    }

    #[test]
    fn decompose_vanishing_parts() {
        let r = [0.5, -0.2, 0.9];
        let zeros = [0.0; 3];
        let tr = Trace::new(&r, &zeros, &[false; 3], 0.0).unwrap();
        let p = params(0.9, 0.8);
        let adv = gae_truncated(&tr, &p).unwrap();
        for t in 0..3 {
            let (rp, vp) = decompose(&tr, t, &p).unwrap();
            assert_eq!(vp, 0.0);
            assert!((rp - adv[t]).abs() < 1e-15);
        }
        let v = [0.3, 0.1, -0.4];
        let tr = Trace::new(&zeros, &v, &[false; 3], 0.0).unwrap();
        let (rp, vp) = decompose(&tr, 2, &p).unwrap();
        assert_eq!(rp, 0.0);
        assert_eq!(vp, 0.4);
    }

    #[test]
    fn normalize_examples() {
        let mut a = [1.0, 2.0, 3.0];
        normalize_masked(&mut a, &[true; 3]).unwrap();
        let expected = 1.224_744_871_391_589;
        assert!((a[0] + expected).abs() < 1e-7 && a[1].abs() < 1e-12 && (a[2] - expected).abs() < 1e-7);

        let mut c = [5.0; 3];
        normalize_masked(&mut c, &[true; 3]).unwrap();
        assert_eq!(c, [0.0; 3]);

        let mut m = [1.0, 123.456, 3.0, f64::MAX];
        normalize_masked(&mut m, &[true, false, true, false]).unwrap();
        assert_eq!(m[1].to_bits(), 123.456f64.to_bits());
        assert_eq!(m[3].to_bits(), f64::MAX.to_bits());

        assert_eq!(normalize_masked(&mut [1.0, 2.0], &[false, false]), Err(Error::Empty));
    }

    #[test]
    fn normalize_batch_leaves_targets() {
        let batch = AdvantageBatch {
            advantages: vec![1.0, 4.0, -2.0],
            value_targets: vec![0.5, 0.5, 0.5],
            keep_mask: vec![true, true, false],
            t_index: vec![1, 2, 3],
        };
        let out = normalize_advantages(&batch).unwrap();
        assert_eq!(out.value_targets, batch.value_targets);
        assert_eq!(out.advantages[2], -2.0);
        assert!((out.advantages[0] + out.advantages[1]).abs() < 1e-12);
    }

    #[test]
    fn value_target_examples() {
        assert_eq!(value_targets(&[0.0, 0.0], &[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(value_targets(&[1.0], &[2.0]).unwrap(), vec![3.0]);
        assert!(value_targets(&[1.0], &[]).is_err());
    }

    fn segment() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, f64)> {
        (1usize..=64).prop_flat_map(|n| {
            (
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(prop::bool::weighted(0.1), n),
                -1.0f64..1.0,
            )
        })
    }

    fn grid() -> impl Strategy<Value = EstimatorParams> {
        (
            prop::sample::select(vec![0.5, 0.9, 0.99]),
            prop::sample::select(vec![0.0, 0.5, 0.95, 1.0]),
            prop::bool::ANY,
        )
            .prop_map(|(g, l, value)| {
                let mode = if value {
                    BootstrapMode::ValueAtTruncation
                } else {
                    BootstrapMode::ZeroAtTruncation
                };
                EstimatorParams::new(g, l, mode).unwrap()
            })
    }

    proptest! {
        #[test]
        fn recursion_matches_oracle_sum((r, v, d, boot) in segment(), p in grid()) {
            let tr = Trace::new(&r, &v, &d, boot).unwrap();
            let rec = gae_truncated(&tr, &p).unwrap();
            let oracle = oracle_gae(&r, &v, &d, boot, &p);
            let direct = gae_direct_sum(&tr, &p).unwrap();
            for t in 0..r.len() {
                prop_assert!((rec[t] - oracle[t]).abs() < 1e-10);
                prop_assert!((rec[t] - direct[t]).abs() < 1e-10);
            }
        }

        #[test]
        fn exponential_form_matches_recursion((r, v, d, boot) in segment(), p in grid()) {
            let tr = Trace::new(&r, &v, &d, boot).unwrap();
            let rec = gae_truncated(&tr, &p).unwrap();
            for t in 0..r.len() {
                prop_assert!((gae_exponential_form(&tr, t, &p).unwrap() - rec[t]).abs() < 1e-8);
            }
        }

        #[test]
        fn n_step_forms_agree((r, v, d, boot) in segment(), p in grid()) {
            let tr = Trace::new(&r, &v, &d, boot).unwrap();
            let deltas = td_residuals(&tr, &p);
            for t in 0..r.len() {
                let end = tr.episode_end(t);
                for k in 1..=(r.len() - t) {
                    let last = (t + k - 1).min(end);
                    let by_deltas: f64 = (t..=last).map(|j| powi(p.gamma, j - t) * deltas[j]).sum();
                    prop_assert!((n_step_advantage(&tr, t, k, &p).unwrap() - by_deltas).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn lambda_return_is_value_plus_gae((r, v, d, boot) in segment(), p in grid()) {
            let tr = Trace::new(&r, &v, &d, boot).unwrap();
            let rec = gae_truncated(&tr, &p).unwrap();
            for t in 0..r.len() {
                prop_assert!((lambda_return(&tr, t, &p).unwrap() - v[t] - rec[t]).abs() < 1e-10);
            }
        }

        #[test]
        fn decomposition_sums_to_gae((r, v, d, boot) in segment(), p in grid()) {
            let tr = Trace::new(&r, &v, &d, boot).unwrap();
            let rec = gae_truncated(&tr, &p).unwrap();
            for t in 0..r.len() {
                let (rp, vp) = decompose(&tr, t, &p).unwrap();
                prop_assert!((rp + vp - rec[t]).abs() < 1e-10);
            }
        }

        #[test]
        fn bias_identity_and_monotone_magnitude(
            (r, v) in (2usize..=64).prop_flat_map(|n| (
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
            )),
            cut in 0.0f64..1.0,
            p in grid(),
        ) {
            let n = r.len();
            let mut d = vec![false; n];
            d[n - 1] = true;
            let tr = Trace::new(&r, &v, &d, 0.0).unwrap();
            let truncation = 1 + ((n - 1) as f64 * cut) as usize;
            let b_last = bias_term(&tr, truncation - 1, truncation, &p).unwrap();
            let complete = gae_complete(&tr, &p).unwrap();
            let head = Trace::new(&r[..truncation], &v[..truncation], &d[..truncation], v[truncation]).unwrap();
            let truncated = gae_truncated(&head, &p).unwrap();
            let mut prev = f64::INFINITY;
            for t in (0..truncation).rev() {
                let b = bias_term(&tr, t, truncation, &p).unwrap();
                let closed = powi(p.decay(), truncation - 1 - t) * b_last;
                prop_assert!((b - closed).abs() <= 1e-12 * (1.0 + b.abs()));
                prop_assert!((b - (complete[t] - truncated[t])).abs() < 1e-10);
                prop_assert!(b.abs() <= prev + 1e-15);
                prev = b.abs();
            }
        }

        #[test]
        fn episode_boundary_isolation(
            (r, v) in (2usize..=40).prop_flat_map(|n| (
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
            )),
            at in 0.0f64..1.0,
            p in grid(),
        ) {
            let n = r.len();
            let cut = ((n - 1) as f64 * at) as usize;
            let mut d = vec![false; n];
            d[cut] = true;
            let before = gae_truncated(&Trace::new(&r, &v, &d, 0.7).unwrap(), &p).unwrap();
            let mut r2 = r.clone();
            let mut v2 = v.clone();
            for j in cut + 1..n {
                r2[j] = 0.0;
                v2[j] = 0.0;
            }
            let after = gae_truncated(&Trace::new(&r2, &v2, &d, 0.0).unwrap(), &p).unwrap();
            for t in 0..=cut {
                prop_assert_eq!(before[t].to_bits(), after[t].to_bits());
            }
        }
    }
}
