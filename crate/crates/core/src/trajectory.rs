//! Fixed-length rollout segments and the partial keep/discard/carryover
//! bookkeeping.
//!
//! Each actor fills a segment of exactly `T` transitions. After advantages are
//! computed, [`split_partial`] keeps the first `ε` estimates and hands back
//! the rest of the trailing, unterminated chunk as a tail. [`ActorBuffer::carryover`]
//! re-seeds the next segment with that tail, so every transition is
//! eventually trained on from an early, low-bias position.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    /// The episode ended after this step.
    pub done: bool,
    /// `V(s_t)`; refreshed for carried transitions before advantages are
    /// recomputed.
    pub value_pred: f64,
    /// `log π_old(a_t | s_t)` at collection time. Never refreshed.
    pub behavior_logprob: f64,
}

/// A full segment of `T` transitions from one actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub transitions: Vec<Transition>,
    /// Leading transitions that were carried over from the previous segment.
    pub carried_count: usize,
    pub actor_id: usize,
    /// Observation following the last step (a fresh reset observation when
    /// the last step is terminal).
    pub next_observation: Vec<f64>,
    /// `V` of `next_observation`, or 0 when the last step is terminal.
    pub bootstrap_value: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.transitions.last().is_some_and(|tr| tr.done)
    }

    /// Owned reward/value/done columns; borrow them with [`SegmentColumns::trace`].
    pub fn columns(&self) -> SegmentColumns {
        SegmentColumns {
            rewards: self.transitions.iter().map(|tr| tr.reward).collect(),
            values: self.transitions.iter().map(|tr| tr.value_pred).collect(),
            dones: self.transitions.iter().map(|tr| tr.done).collect(),
            bootstrap_value: self.bootstrap_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentColumns {
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub bootstrap_value: f64,
}

impl SegmentColumns {
    pub fn trace(&self) -> Trace<'_> {
        Trace::new(&self.rewards, &self.values, &self.dones, self.bootstrap_value)
            .expect("columns are built with equal lengths")
    }
}

/// Per-step advantages for one segment or a concatenated update batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBatch {
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
    pub keep_mask: Vec<bool>,
    /// 1-based position of each step within its segment.
    pub t_index: Vec<usize>,
}

impl AdvantageBatch {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }

    pub fn kept_count(&self) -> usize {
        self.keep_mask.iter().filter(|&&k| k).count()
    }
}

/// The in-progress segment of one actor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorBuffer {
    actor_id: usize,
    capacity: usize,
    in_progress: Vec<Transition>,
    carried_count: usize,
}

impl ActorBuffer {
    pub fn new(actor_id: usize, capacity: usize) -> Self {
        Self {
            actor_id,
            capacity,
            in_progress: Vec::with_capacity(capacity),
            carried_count: 0,
        }
    }

    pub fn actor_id(&self) -> usize {
        self.actor_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.in_progress.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_progress.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.in_progress.len() == self.capacity
    }

    pub fn carried_count(&self) -> usize {
        self.carried_count
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.in_progress
    }

    pub fn push(&mut self, transition: Transition) -> Result<()> {
        if self.is_full() {
            return Err(Error::Overflow {
                actor: self.actor_id,
                capacity: self.capacity,
            });
        }
        self.in_progress.push(transition);
        Ok(())
    }

    /// Hand over the full segment and start an empty one.
    pub fn finalize(&mut self, next_observation: Vec<f64>, bootstrap_value: f64) -> Result<Segment> {
        if !self.is_full() {
            return Err(Error::Precondition("segment finalized before reaching its sample length"));
        }
        let transitions = core::mem::replace(&mut self.in_progress, Vec::with_capacity(self.capacity));
        let bootstrap_value = if transitions.last().is_some_and(|tr| tr.done) {
            0.0
        } else {
            bootstrap_value
        };
        let segment = Segment {
            transitions,
            carried_count: self.carried_count,
            actor_id: self.actor_id,
            next_observation,
            bootstrap_value,
        };
        self.carried_count = 0;
        Ok(segment)
    }

    /// Recompute `value_pred` of the transitions already buffered (the carried
    /// tail) with the current value function. Behavior log-probs stay as they
    /// were at collection time.
    pub fn refresh_values<F: FnMut(&[f64]) -> Result<f64>>(&mut self, mut value: F) -> Result<()> {
        for tr in &mut self.in_progress {
            tr.value_pred = value(&tr.observation)?;
        }
        Ok(())
    }

    /// Seed the next segment with transitions discarded from the previous one.
    pub fn carryover(&mut self, tail: Vec<Transition>) -> Result<()> {
        if !self.in_progress.is_empty() {
            return Err(Error::NotEmpty {
                actor: self.actor_id,
                len: self.in_progress.len(),
            });
        }
        if tail.len() >= self.capacity && self.capacity > 0 {
            return Err(Error::Overflow {
                actor: self.actor_id,
                capacity: self.capacity,
            });
        }
        self.carried_count = tail.len();
        self.in_progress = tail;
        Ok(())
    }
}

/// Per-actor buffers, indexed by actor id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    actors: Vec<ActorBuffer>,
}

impl RolloutBuffer {
    pub fn new(n_actors: usize, sample_length: usize) -> Self {
        Self {
            actors: (0..n_actors).map(|id| ActorBuffer::new(id, sample_length)).collect(),
        }
    }

    pub fn actor(&self, actor_id: usize) -> Result<&ActorBuffer> {
        let len = self.actors.len();
        self.actors.get(actor_id).ok_or(Error::Range {
            what: "actors",
            index: actor_id,
            len,
        })
    }

    pub fn actor_mut(&mut self, actor_id: usize) -> Result<&mut ActorBuffer> {
        let len = self.actors.len();
        self.actors.get_mut(actor_id).ok_or(Error::Range {
            what: "actors",
            index: actor_id,
            len,
        })
    }

    pub fn push(&mut self, actor_id: usize, transition: Transition) -> Result<()> {
        self.actor_mut(actor_id)?.push(transition)
    }

    pub fn carryover(&mut self, actor_id: usize, tail: Vec<Transition>) -> Result<()> {
        self.actor_mut(actor_id)?.carryover(tail)
    }
}

/// Index of the first step that partial GAE may discard: everything up to
/// the last terminal step is kept, plus the first `epsilon` steps.
pub fn keep_boundary(dones: &[bool], epsilon: usize) -> usize {
    let after_last_done = dones.iter().rposition(|&d| d).map_or(0, |j| j + 1);
    epsilon.max(after_last_done).min(dones.len())
}

/// Keep mask and carried tail for one segment.
///
/// Unterminated segment: steps `1..=ε` are kept and steps `ε+1..=T` are
/// copied into the tail. Terminated segment: everything is kept and the tail
/// is empty. Episodes that end inside the segment are always kept in full.
pub fn split_partial(segment: &Segment, epsilon: usize) -> Result<(Vec<bool>, Vec<Transition>)> {
    let len = segment.len();
    if epsilon == 0 || epsilon > len {
        return Err(Error::Config(alloc::format!(
            "partial coefficient must satisfy 1 <= epsilon <= T, got epsilon={epsilon}, T={len}"
        )));
    }
    let dones: Vec<bool> = segment.transitions.iter().map(|tr| tr.done).collect();
    let boundary = keep_boundary(&dones, epsilon);
    let mut mask = vec![false; len];
    mask[..boundary].fill(true);
    Ok((mask, segment.transitions[boundary..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transition(i: usize, done: bool) -> Transition {
        Transition {
            observation: vec![i as f64, 0.1 * i as f64 + 1e-17],
            action: Action::Discrete(i % 3),
            reward: i as f64,
            done,
            value_pred: 0.5,
            behavior_logprob: -0.7 - i as f64 * 1e-3,
        }
    }

    fn segment(len: usize, done_at: &[usize]) -> Segment {
        let mut buf = ActorBuffer::new(0, len);
        for i in 0..len {
            buf.push(transition(i, done_at.contains(&i))).unwrap();
        }
        buf.finalize(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn fills_to_length_even_across_episode_ends() {
        let seg = segment(8, &[2]);
        assert_eq!(seg.len(), 8);
        assert!(seg.transitions[2].done);
        assert!(!seg.is_terminated());
    }

    #[test]
    fn overflow_is_an_error() {
        let mut buf = ActorBuffer::new(3, 4);
        for i in 0..4 {
            buf.push(transition(i, false)).unwrap();
        }
        assert_eq!(
            buf.push(transition(4, false)),
            Err(Error::Overflow { actor: 3, capacity: 4 })
        );
    }

    #[test]
    fn finalize_needs_full_segment() {
        let mut buf = ActorBuffer::new(0, 4);
        buf.push(transition(0, false)).unwrap();
        assert!(buf.finalize(vec![], 0.0).is_err());
    }

    #[test]
    fn terminal_segment_has_zero_bootstrap() {
        let seg = segment(4, &[3]);
        assert_eq!(seg.bootstrap_value, 0.0);
        assert_eq!(segment(4, &[]).bootstrap_value, 1.0);
    }

    #[test]
    fn split_baseline_keeps_everything() {
        let seg = segment(512, &[]);
        let (mask, tail) = split_partial(&seg, 512).unwrap();
        assert!(mask.iter().all(|&k| k));
        assert!(tail.is_empty());
    }

    #[test]
    fn split_unterminated() {
        let seg = segment(8, &[]);
        let (mask, tail) = split_partial(&seg, 3).unwrap();
        assert_eq!(mask, vec![true, true, true, false, false, false, false, false]);
        assert_eq!(tail.len(), 5);
        assert_eq!(tail[..], seg.transitions[3..]);
        for (a, b) in tail.iter().zip(&seg.transitions[3..]) {
            for (x, y) in a.observation.iter().zip(&b.observation) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn split_terminated_keeps_all() {
        let seg = segment(8, &[7]);
        let (mask, tail) = split_partial(&seg, 3).unwrap();
        assert!(mask.iter().all(|&k| k));
        assert!(tail.is_empty());
    }

    #[test]
    fn split_keeps_contained_episodes() {
        let seg = segment(8, &[4]);
        let (mask, tail) = split_partial(&seg, 3).unwrap();
        assert_eq!(mask.iter().filter(|&&k| k).count(), 5);
        assert_eq!(tail.len(), 3);
    }

    #[test]
    fn split_rejects_bad_epsilon() {
        let seg = segment(8, &[]);
        assert!(matches!(split_partial(&seg, 0), Err(Error::Config(_))));
        assert!(matches!(split_partial(&seg, 9), Err(Error::Config(_))));
    }

    #[test]
    fn carryover_then_fill() {
        let seg = segment(8, &[]);
        let (_, tail) = split_partial(&seg, 3).unwrap();
        let mut buf = ActorBuffer::new(0, 8);
        buf.carryover(tail.clone()).unwrap();
        for i in 0..3 {
            buf.push(transition(100 + i, false)).unwrap();
        }
        let next = buf.finalize(vec![0.0], 0.0).unwrap();
        assert_eq!(next.len(), 8);
        assert_eq!(next.carried_count, 5);
        assert_eq!(next.transitions[..5], tail[..]);
        assert_eq!(next.transitions[0].behavior_logprob, seg.transitions[3].behavior_logprob);
    }

    #[test]
    fn carryover_into_nonempty_is_an_error() {
        let mut buf = ActorBuffer::new(2, 8);
        buf.push(transition(0, false)).unwrap();
        assert_eq!(
            buf.carryover(vec![transition(1, false)]),
            Err(Error::NotEmpty { actor: 2, len: 1 })
        );
    }

    #[test]
    fn carried_count_resets_after_terminal_segment() {
        let seg = segment(8, &[7]);
        let (_, tail) = split_partial(&seg, 3).unwrap();
        let mut buf = ActorBuffer::new(0, 8);
        buf.carryover(tail).unwrap();
        assert_eq!(buf.carried_count(), 0);
    }

    #[test]
    fn rollout_buffer_routes_by_actor() {
        let mut rb = RolloutBuffer::new(2, 4);
        rb.push(1, transition(0, false)).unwrap();
        assert_eq!(rb.actor(1).unwrap().len(), 1);
        assert_eq!(rb.actor(0).unwrap().len(), 0);
        assert!(rb.push(2, transition(0, false)).is_err());
    }

    /// Index bookkeeping for a run without terminal steps: each iteration the
    /// segment is topped up with fresh indices, the first ε are kept and the
    /// rest carried. Every index must be kept exactly once.
    fn simulate_conservation(t_len: usize, eps: usize, iterations: usize) {
        let mut next_index = 0usize;
        let mut carried: Vec<usize> = Vec::new();
        let mut kept_count: Vec<usize> = Vec::new();
        for _ in 0..iterations {
            let mut seg = core::mem::take(&mut carried);
            let fresh = t_len - seg.len();
            seg.extend(next_index..next_index + fresh);
            next_index += fresh;
            kept_count.resize(next_index, 0);

            let mut buf = ActorBuffer::new(0, t_len);
            for (pos, &idx) in seg.iter().enumerate() {
                let mut tr = transition(idx, false);
                tr.value_pred = pos as f64;
                buf.push(tr).unwrap();
            }
            let segment = buf.finalize(vec![], 0.0).unwrap();
            let (mask, tail) = split_partial(&segment, eps).unwrap();
            assert_eq!(mask.iter().filter(|&&k| k).count(), eps);
            for (pos, &idx) in seg.iter().enumerate() {
                if mask[pos] {
                    kept_count[idx] += 1;
                }
            }
            carried = tail.iter().map(|tr| tr.reward as usize).collect();
        }
        let pending: Vec<usize> = carried;
        for (idx, &count) in kept_count.iter().enumerate() {
            if pending.contains(&idx) {
                assert_eq!(count, 0, "index {idx} pending but already kept");
            } else {
                assert_eq!(count, 1, "index {idx} kept {count} times for T={t_len} eps={eps}");
            }
        }
    }

    #[test]
    fn conservation_of_samples() {
        simulate_conservation(8, 3, 50);
        simulate_conservation(8, 4, 50);
        simulate_conservation(512, 64, 40);
    }

    #[test]
    fn keep_boundary_cases() {
        assert_eq!(keep_boundary(&[false; 8], 3), 3);
        assert_eq!(keep_boundary(&[false, false, false, false, true, false, false, false], 3), 5);
        assert_eq!(keep_boundary(&[false, true, false, false], 3), 3);
        assert_eq!(keep_boundary(&[false, false, false, true], 1), 4);
    }
}
