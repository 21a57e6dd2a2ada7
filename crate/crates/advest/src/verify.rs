//! `advest verify`: identity and oracle checks over the whole stack.
//!
//! The estimator checks run against a swappable GAE implementation so that a
//! deliberately broken recursion ([`sign_flipped_gae`]) can prove the suite
//! notices.

use advest_core::envs::{ActionSpace, CartPoleLike};
use advest_core::estimators::{
    decompose, gae_direct_sum, gae_exponential_form, gae_truncated, BootstrapMode, EstimatorParams, Trace,
};
use advest_core::nn::{max_relative_error, numerical_gradient, Activation, AdamState, Mlp, Policy};
use advest_core::oracle::{
    exact_state_values, rollout_rng, stationary_distribution, value_iteration, TabularMdp, TabularPolicy,
};
use advest_core::ppo::{loss_and_grad, train, LossCoefs, RunLog, TrainerConfig, TrainingSample};
use advest_core::trajectory::{split_partial, Action, ActorBuffer, Transition};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type GaeFn = fn(&Trace<'_>, &EstimatorParams) -> advest_core::Result<Vec<f64>>;

/// The implementation under test.
#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub gae: GaeFn,
}

impl Default for Fixture {
    fn default() -> Self {
        Self { gae: gae_truncated }
    }
}

/// Mutation fixture: the backward recursion with the sign of the `γλ` term
/// flipped, `Â_t = δ_t − γλ·Â_{t+1}`.
pub fn sign_flipped_gae(trace: &Trace<'_>, params: &EstimatorParams) -> advest_core::Result<Vec<f64>> {
    let n = trace.len();
    let mut out = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        if trace.dones()[t] {
            next = 0.0;
        }
        next = trace.delta(t, params) - params.decay() * next;
        out[t] = next;
    }
    Ok(out)
}

type CheckFn = fn(&Fixture) -> Result<String, String>;

#[derive(Debug, Clone, Copy)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    run: CheckFn,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub const SUITES: [&str; 5] = ["estimators", "trajectory", "oracle", "nn", "ppo"];

pub fn checks() -> Vec<Check> {
    let c = |suite, name, run| Check { suite, name, run };
    vec![
        c("estimators", "recursion_matches_direct_sum", recursion_matches_direct_sum),
        c("estimators", "recursion_matches_exponential_form", recursion_matches_exponential_form),
        c("estimators", "bias_identity", bias_identity),
        c("estimators", "decomposition_identity", decomposition_identity),
        c("trajectory", "partial_split_uses_each_step_once", partial_split_uses_each_step_once),
        c("trajectory", "full_keep_discards_nothing", full_keep_discards_nothing),
        c("oracle", "chain_values_closed_form", chain_values_closed_form),
        c("oracle", "value_iteration_fixed_point", value_iteration_fixed_point),
        c("oracle", "stationary_distribution_invariant", stationary_distribution_invariant),
        c("nn", "value_net_gradients", value_net_gradients),
        c("nn", "policy_gradients", policy_gradients),
        c("nn", "adam_step_bound", adam_step_bound),
        c("ppo", "total_loss_gradients", total_loss_gradients),
        c("ppo", "full_keep_equals_plain_ppo", full_keep_equals_plain_ppo),
        c("ppo", "same_seed_same_log", same_seed_same_log),
    ]
}

/// Run every check whose suite equals `filter` or whose name contains it.
pub fn run(filter: Option<&str>, fixture: &Fixture) -> Vec<CheckResult> {
    checks()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| c.suite == f || c.name.contains(f)))
        .map(|c| {
            let outcome = (c.run)(fixture);
            CheckResult {
                suite: c.suite,
                name: c.name,
                passed: outcome.is_ok(),
                detail: outcome.unwrap_or_else(|e| e),
            }
        })
        .collect()
}

pub fn format_table(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:<11} {:<36} {}  {}\n",
            r.suite,
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    out
}

const GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];
const LAMBDAS: [f64; 3] = [0.0, 0.5, 0.95];

struct RandomSegment {
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    bootstrap: f64,
    params: EstimatorParams,
}

impl RandomSegment {
    fn trace(&self) -> Trace<'_> {
        Trace::new(&self.rewards, &self.values, &self.dones, self.bootstrap).expect("consistent columns")
    }
}

fn random_segment(rng: &mut ChaCha8Rng, max_len: usize, done_prob: f64, terminated: bool) -> RandomSegment {
    let n = rng.random_range(1..=max_len);
    let mut dones: Vec<bool> = (0..n).map(|_| rng.random_bool(done_prob)).collect();
    if terminated {
        dones.fill(false);
        dones[n - 1] = true;
    }
    let bootstrap = match rng.random_bool(0.5) {
        true => BootstrapMode::ZeroAtTruncation,
        false => BootstrapMode::ValueAtTruncation,
    };
    let params = EstimatorParams::new(
        GAMMAS[rng.random_range(0..3)],
        LAMBDAS[rng.random_range(0..3)],
        bootstrap,
    )
    .expect("grid parameters are valid");
    RandomSegment {
        rewards: (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        values: (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        dones,
        bootstrap: rng.random_range(-1.0..=1.0),
        params,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn within(label: &str, err: f64, tol: f64) -> Result<String, String> {
    if err <= tol {
        Ok(format!("{label} {err:.2e} <= {tol:.0e}"))
    } else {
        Err(format!("{label} {err:.2e} > {tol:.0e}"))
    }
}

fn recursion_matches_direct_sum(f: &Fixture) -> Result<String, String> {
    let mut rng = rollout_rng(101, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let seg = random_segment(&mut rng, 64, 0.05, false);
        let tr = seg.trace();
        let a = (f.gae)(&tr, &seg.params).map_err(|e| e.to_string())?;
        let b = gae_direct_sum(&tr, &seg.params).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&a, &b));
    }
    within("max |diff|", worst, 1e-10)
}

fn recursion_matches_exponential_form(f: &Fixture) -> Result<String, String> {
    let mut rng = rollout_rng(102, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let seg = random_segment(&mut rng, 64, 0.05, false);
        let tr = seg.trace();
        let a = (f.gae)(&tr, &seg.params).map_err(|e| e.to_string())?;
        for (t, at) in a.iter().enumerate() {
            let e = gae_exponential_form(&tr, t, &seg.params).map_err(|e| e.to_string())?;
            worst = worst.max((at - e).abs());
        }
    }
    within("max |diff|", worst, 1e-8)
}

/// Bias of truncating a terminated episode after `T` steps, measured as the
/// difference of the implementation's complete and truncated estimates, must
/// decay like `(γλ)^{T−t}` from its value at the cut.
fn bias_identity(f: &Fixture) -> Result<String, String> {
    let mut rng = rollout_rng(103, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let seg = random_segment(&mut rng, 64, 0.0, true);
        let n = seg.rewards.len();
        if n < 2 {
            continue;
        }
        let cut = rng.random_range(1..n);
        let full = (f.gae)(&seg.trace(), &seg.params).map_err(|e| e.to_string())?;
        let head = Trace::new(
            &seg.rewards[..cut],
            &seg.values[..cut],
            &seg.dones[..cut],
            seg.values[cut],
        )
        .map_err(|e| e.to_string())?;
        let truncated = (f.gae)(&head, &seg.params).map_err(|e| e.to_string())?;
        let b_last = full[cut - 1] - truncated[cut - 1];
        for t in 0..cut {
            let b = full[t] - truncated[t];
            let closed = seg.params.decay().powi((cut - 1 - t) as i32) * b_last;
            worst = worst.max((b - closed).abs() / (1.0 + b.abs()));
        }
    }
    within("max rel. |B_t - (γλ)^(T-t) B_T|", worst, 1e-10)
}

fn decomposition_identity(f: &Fixture) -> Result<String, String> {
    let mut rng = rollout_rng(104, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let seg = random_segment(&mut rng, 64, 0.05, false);
        let tr = seg.trace();
        let a = (f.gae)(&tr, &seg.params).map_err(|e| e.to_string())?;
        for (t, at) in a.iter().enumerate() {
            let (rp, vp) = decompose(&tr, t, &seg.params).map_err(|e| e.to_string())?;
            worst = worst.max((rp + vp - at).abs());
        }
    }
    within("max |A^r + A^v - A|", worst, 1e-10)
}

fn numbered(i: usize, done: bool) -> Transition {
    Transition {
        observation: vec![i as f64],
        action: Action::Discrete(0),
        reward: 0.0,
        done,
        value_pred: 0.0,
        behavior_logprob: 0.0,
    }
}

fn partial_split_uses_each_step_once(_: &Fixture) -> Result<String, String> {
    let mut rng = rollout_rng(105, 0);
    for (t_len, eps) in [(8, 3), (8, 4), (16, 1), (64, 32), (128, 128)] {
        let mut buf = ActorBuffer::new(0, t_len);
        let mut next = 0usize;
        let mut kept = Vec::new();
        for _ in 0..200 {
            while !buf.is_full() {
                buf.push(numbered(next, rng.random_bool(0.02))).map_err(|e| e.to_string())?;
                next += 1;
            }
            let seg = buf.finalize(vec![], 0.0).map_err(|e| e.to_string())?;
            let (mask, tail) = split_partial(&seg, eps).map_err(|e| e.to_string())?;
            for (tr, k) in seg.transitions.iter().zip(&mask) {
                if *k {
                    kept.push(tr.observation[0] as usize);
                }
            }
            buf.carryover(tail).map_err(|e| e.to_string())?;
        }
        let pending = buf.len();
        if kept != (0..next - pending).collect::<Vec<_>>() {
            return Err(format!("T={t_len} eps={eps}: kept steps are not each step exactly once, in order"));
        }
    }
    Ok("every collected step kept exactly once".into())
}

fn full_keep_discards_nothing(_: &Fixture) -> Result<String, String> {
    let mut buf = ActorBuffer::new(0, 32);
    for i in 0..32 {
        buf.push(numbered(i, false)).map_err(|e| e.to_string())?;
    }
    let seg = buf.finalize(vec![], 0.0).map_err(|e| e.to_string())?;
    let (mask, tail) = split_partial(&seg, 32).map_err(|e| e.to_string())?;
    if mask.iter().all(|&k| k) && tail.is_empty() {
        Ok("epsilon = T keeps all 32".into())
    } else {
        Err("epsilon = T discarded data".into())
    }
}

fn chain_values_closed_form(_: &Fixture) -> Result<String, String> {
    let (n, gamma) = (6, 0.9);
    let mdp = TabularMdp::terminating_chain(n, gamma).map_err(|e| e.to_string())?;
    let policy = TabularPolicy::deterministic(mdp.n_actions(), &vec![1; n + 1]).map_err(|e| e.to_string())?;
    let v = exact_state_values(&mdp, &policy).map_err(|e| e.to_string())?;
    let err = (0..n).map(|s| (v[s] - gamma.powi((n - 1 - s) as i32)).abs()).fold(0.0, f64::max);
    within("max |V - γ^(n-1-s)|", err, 1e-12)
}

fn value_iteration_fixed_point(_: &Fixture) -> Result<String, String> {
    let mdp = TabularMdp::two_exit_chain(7, 0.4, 1.0, 0.1, 0.85).map_err(|e| e.to_string())?;
    let (v_star, greedy) = value_iteration(&mdp, 1e-13).map_err(|e| e.to_string())?;
    let policy = TabularPolicy::deterministic(mdp.n_actions(), &greedy).map_err(|e| e.to_string())?;
    let v = exact_state_values(&mdp, &policy).map_err(|e| e.to_string())?;
    within("max |V_greedy - V*|", max_abs_diff(&v, &v_star), 1e-9)
}

fn stationary_distribution_invariant(_: &Fixture) -> Result<String, String> {
    let mdp = TabularMdp::cyclic_chain(5, 0.2, 0.9).map_err(|e| e.to_string())?;
    let policy = TabularPolicy::new(5, 2, vec![0.3, 0.7, 0.5, 0.5, 0.9, 0.1, 0.2, 0.8, 0.6, 0.4])
        .map_err(|e| e.to_string())?;
    let d = stationary_distribution(&mdp, &policy).map_err(|e| e.to_string())?;
    let mut next = vec![0.0; 5];
    for s in 0..5 {
        for (a, pa) in policy.probs(s).iter().enumerate() {
            for (s2, p) in mdp.next_distribution(s, a).iter().enumerate() {
                next[s2] += d[s] * pa * p;
            }
        }
    }
    within("max |dP - d|", max_abs_diff(&next, &d), 1e-12)
}

fn net_gradient_error(net: &Mlp, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cache = net.forward_cached(&x).map_err(|e| e.to_string())?;
    let mut g = vec![0.0; net.param_count()];
    net.backward(&cache, &u, &mut g).map_err(|e| e.to_string())?;
    let numeric = numerical_gradient(net.params(), 1e-5, |p| {
        let mut n = net.clone();
        n.params_mut().copy_from_slice(p);
        n.forward(&x).expect("same shape").iter().zip(&u).map(|(o, u)| o * u).sum()
    });
    Ok(max_relative_error(&g, &numeric))
}

fn value_net_gradients(_: &Fixture) -> Result<String, String> {
    let mut rng = rollout_rng(106, 0);
    let mut worst: f64 = 0.0;
    for input in [4, 12, 144] {
        let net = Mlp::new(&[input, 64, 64, 1], Activation::Tanh, &mut rng).map_err(|e| e.to_string())?;
        worst = worst.max(net_gradient_error(&net, &mut rng)?);
    }
    within("max rel. error", worst, 1e-4)
}

fn policy_gradients(_: &Fixture) -> Result<String, String> {
    let mut rng = rollout_rng(107, 0);
    let mut worst: f64 = 0.0;
    for space in [ActionSpace::Discrete(2), ActionSpace::Discrete(4), ActionSpace::Continuous(1)] {
        let p = Policy::new(4, &[64, 64], Activation::Tanh, space, 1.0, &mut rng).map_err(|e| e.to_string())?;
        let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (action, _) = p.sample_action(&obs, &mut rng).map_err(|e| e.to_string())?;
        let mut g = vec![0.0; p.param_count()];
        p.accumulate_grad(&obs, &action, 1.0, 0.01, &mut g).map_err(|e| e.to_string())?;
        let numeric = numerical_gradient(&p.params_flat(), 1e-5, |theta| {
            let mut q = p.clone();
            q.set_params_flat(theta).expect("same shape");
            let d = q.distribution(&obs).expect("same shape");
            d.log_prob(&action).expect("same action") + 0.01 * d.entropy()
        });
        worst = worst.max(max_relative_error(&g, &numeric));
    }
    within("max rel. error", worst, 1e-4)
}

fn adam_step_bound(_: &Fixture) -> Result<String, String> {
    let lr = AdamState::DEFAULT_LR;
    let mut adam = AdamState::new(5, lr);
    let mut p = vec![0.0; 5];
    adam.step(&mut p, &[1e6, -1e-6, 3.0, -0.2, 1e-3]).map_err(|e| e.to_string())?;
    let worst = p.iter().map(|d| d.abs()).fold(0.0, f64::max);
    if worst <= lr * (1.0 + 1e-6) {
        Ok(format!("max |step| {worst:.3e} <= lr"))
    } else {
        Err(format!("max |step| {worst:.3e} > lr"))
    }
}

fn total_loss_gradients(_: &Fixture) -> Result<String, String> {
    let mut rng = rollout_rng(108, 0);
    let mut worst: f64 = 0.0;
    for space in [ActionSpace::Discrete(3), ActionSpace::Continuous(2)] {
        for value_clip in [false, true] {
            let policy = Policy::new(4, &[16, 16], Activation::Tanh, space, 1.0, &mut rng).map_err(|e| e.to_string())?;
            let value_net = Mlp::new(&[4, 16, 16, 1], Activation::Tanh, &mut rng).map_err(|e| e.to_string())?;
            let mut samples = Vec::new();
            for _ in 0..16 {
                let obs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (action, logp) = policy.sample_action(&obs, &mut rng).map_err(|e| e.to_string())?;
                let v = value_net.forward(&obs).map_err(|e| e.to_string())?[0];
                samples.push(TrainingSample {
                    observation: obs,
                    action,
                    behavior_logprob: logp + rng.random_range(-0.3..0.3),
                    value_pred: v + rng.random_range(-0.3..0.3),
                    advantage: rng.random_range(-2.0..2.0),
                    value_target: rng.random_range(-2.0..2.0),
                });
            }
            let coefs = LossCoefs {
                clip_coef: 0.2,
                value_coef: 1.0,
                entropy_coef: 0.01,
                value_clip,
            };
            let batch: Vec<&TrainingSample> = samples.iter().collect();
            let adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
            let (_, pg, vg) = loss_and_grad(&policy, &value_net, &batch, &adv, &coefs).map_err(|e| e.to_string())?;
            let np = numerical_gradient(&policy.params_flat(), 1e-5, |theta| {
                let mut p = policy.clone();
                p.set_params_flat(theta).expect("same shape");
                loss_and_grad(&p, &value_net, &batch, &adv, &coefs).expect("same batch").0.total
            });
            let nv = numerical_gradient(value_net.params(), 1e-5, |theta| {
                let mut v = value_net.clone();
                v.params_mut().copy_from_slice(theta);
                loss_and_grad(&policy, &v, &batch, &adv, &coefs).expect("same batch").0.total
            });
            worst = worst.max(max_relative_error(&pg, &np)).max(max_relative_error(&vg, &nv));
        }
    }
    within("max rel. error", worst, 1e-4)
}

fn small_cartpole(partial_gae: bool) -> TrainerConfig {
    TrainerConfig {
        sample_length: 32,
        partial_coef: 32,
        partial_gae,
        n_actors: 2,
        minibatch_size: 32,
        total_env_steps: 640,
        hidden_sizes: vec![16],
        seed: 11,
        ..TrainerConfig::default()
    }
}

fn log_bits(log: &RunLog) -> Vec<Vec<u64>> {
    log.records
        .iter()
        .map(|r| {
            vec![
                r.iteration,
                r.env_steps,
                r.wall_clock_s.to_bits(),
                r.mean_return_100.to_bits(),
                r.success_rate_100.to_bits(),
                r.policy_loss.to_bits(),
                r.value_loss.to_bits(),
                r.entropy.to_bits(),
                r.adv_mean.to_bits(),
                r.adv_std.to_bits(),
                r.kept_fraction.to_bits(),
            ]
        })
        .collect()
}

fn full_keep_equals_plain_ppo(_: &Fixture) -> Result<String, String> {
    let a = train(small_cartpole(true), |_| CartPoleLike::new()).map_err(|e| e.to_string())?;
    let b = train(small_cartpole(false), |_| CartPoleLike::new()).map_err(|e| e.to_string())?;
    if log_bits(&a) == log_bits(&b) {
        Ok(format!("{} identical iterations", a.records.len()))
    } else {
        Err("run logs differ".into())
    }
}

fn same_seed_same_log(_: &Fixture) -> Result<String, String> {
    let mut config = small_cartpole(true);
    config.partial_coef = 16;
    let a = train(config.clone(), |_| CartPoleLike::new()).map_err(|e| e.to_string())?;
    let b = train(config, |_| CartPoleLike::new()).map_err(|e| e.to_string())?;
    if log_bits(&a) == log_bits(&b) {
        Ok(format!("{} identical iterations", a.records.len()))
    } else {
        Err("run logs differ".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let results = run(None, &Fixture::default());
        assert!(results.iter().all(|r| r.passed), "{}", format_table(&results));
        assert_eq!(results.len(), checks().len());
    }

    #[test]
    fn sign_flip_breaks_bias_identity() {
        let mutant = Fixture { gae: sign_flipped_gae };
        let results = run(Some("bias_identity"), &mutant);
        assert_eq!(results.len(), 1);
        assert!(!results[0].passed, "{}", results[0].detail);
    }

    #[test]
    fn filter_selects_suite() {
        let results = run(Some("oracle"), &Fixture::default());
        assert_eq!(results.len(), 3);
        assert!(results.iter().all(|r| r.suite == "oracle"));
        assert!(run(Some("no_such_suite"), &Fixture::default()).is_empty());
    }
}
