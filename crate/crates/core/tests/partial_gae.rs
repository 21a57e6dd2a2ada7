//! Partial GAE end to end on a tabular chain with exact values: the
//! advantages it trains on carry less truncation bias than the ones it
//! throws away, and less than plain PPO's.

use advest_core::envs::{ChainEnv, Environment};
use advest_core::estimators::{gae_truncated, BootstrapMode, EstimatorParams};
use advest_core::oracle::{exact_advantage, exact_state_values, rollout_rng, TabularMdp, TabularPolicy};
use advest_core::trajectory::{split_partial, Action, ActorBuffer, Transition};
use rand::Rng;

const T: usize = 32;

struct Bins {
    kept: (f64, usize),
    discarded: (f64, usize),
}

impl Bins {
    fn kept_bias(&self) -> f64 {
        self.kept.0 / self.kept.1 as f64
    }

    fn discarded_bias(&self) -> f64 {
        self.discarded.0 / self.discarded.1 as f64
    }
}

/// Mean estimation error of kept and discarded advantages over `segments`
/// segments of one long episode.
fn run(epsilon: usize, segments: usize) -> Bins {
    let gamma = 0.99;
    let mdp = TabularMdp::cyclic_chain(5, 0.2, gamma).unwrap();
    let policy = TabularPolicy::uniform(5, 2);
    let v = exact_state_values(&mdp, &policy).unwrap();
    let adv = exact_advantage(&mdp, &policy, &v).unwrap();
    let params = EstimatorParams::new(gamma, 0.95, BootstrapMode::ZeroAtTruncation).unwrap();
    let state_of = |obs: &[f64]| obs.iter().position(|&x| x == 1.0).unwrap();

    let mut env = ChainEnv::new(mdp, usize::MAX).unwrap();
    let mut rng = rollout_rng(3, 0);
    let mut obs = env.reset(7);
    let mut buf = ActorBuffer::new(0, T);
    let mut bins = Bins {
        kept: (0.0, 0),
        discarded: (0.0, 0),
    };
    for _ in 0..segments {
        while !buf.is_full() {
            let s = state_of(&obs);
            let action = Action::Discrete(rng.random_range(0..2));
            let step = env.step(&action).unwrap();
            buf.push(Transition {
                observation: obs,
                action,
                reward: step.reward,
                done: step.done,
                value_pred: v[s],
                behavior_logprob: 0.5f64.ln(),
            })
            .unwrap();
            obs = step.observation;
        }
        let seg = buf.finalize(obs.clone(), v[state_of(&obs)]).unwrap();
        let cols = seg.columns();
        let estimates = gae_truncated(&cols.trace(), &params).unwrap();
        let (mask, tail) = split_partial(&seg, epsilon).unwrap();
        for ((tr, a_hat), keep) in seg.transitions.iter().zip(&estimates).zip(&mask) {
            let Action::Discrete(a) = tr.action else { unreachable!() };
            let err = a_hat - adv[state_of(&tr.observation)][a];
            let bin = if *keep { &mut bins.kept } else { &mut bins.discarded };
            bin.0 += err;
            bin.1 += 1;
        }
        buf.carryover(tail).unwrap();
    }
    bins
}

#[test]
fn kept_advantages_are_less_biased() {
    let partial = run(T / 2, 4000);
    let baseline = run(T, 4000);
    assert_eq!(baseline.discarded.1, 0);
    // Every step is trained on exactly once, whatever epsilon is.
    assert!(partial.kept.1 >= 4000 * T / 2 - T);

    let (kept, discarded, plain) = (partial.kept_bias(), partial.discarded_bias(), baseline.kept_bias());
    // Zero bootstrap at the cut biases estimates downward by an amount
    // proportional to (γλ)^(T-t), so the ratios of the bin means follow from
    // geometric sums over the positions in each bin.
    assert!(discarded < 0.0 && plain < 0.0, "{discarded} {plain}");
    let decay: f64 = 0.99 * 0.95;
    let weight = |positions: std::ops::Range<usize>| {
        let n = positions.len() as f64;
        positions.map(|p| decay.powi((T - 1 - p) as i32)).sum::<f64>() / n
    };
    let expect_vs_plain = weight(0..T / 2) / weight(0..T);
    let expect_vs_discarded = weight(0..T / 2) / weight(T / 2..T);
    assert!((kept / plain - expect_vs_plain).abs() < 0.1, "kept {kept}, plain {plain}, expected ratio {expect_vs_plain}");
    assert!(
        (kept / discarded - expect_vs_discarded).abs() < 0.1,
        "kept {kept}, discarded {discarded}, expected ratio {expect_vs_discarded}"
    );
}
