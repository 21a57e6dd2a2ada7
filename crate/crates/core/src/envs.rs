//! Small deterministic environments.
//!
//! * [`ChainEnv`] wraps any [`TabularMdp`], so trained policies can be checked
//!   against exact dynamic programming.
//! * [`SparseGrid`] is a 12×12 grid with a single rewarding goal and a long
//!   horizon: rewards are rare and episodes are usually longer than a segment.
//! * [`CartPoleLike`] is the classic cart-pole balance task with continuous
//!   observations and +1 reward per step.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{cos, sin};
use crate::oracle::{sample_categorical, TabularMdp};
use crate::trajectory::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    /// Box `[-1, 1]^dim`.
    Continuous(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub observation_dim: usize,
    pub action_space: ActionSpace,
    pub max_episode_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Meaningful on the terminal step: the episode reached its goal.
    pub success: bool,
}

pub trait Environment {
    fn spec(&self) -> EnvSpec;

    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: &Action) -> Result<Step>;
}

fn discrete_action(action: &Action, n: usize) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        Action::Discrete(a) => Err(Error::InvalidAction(alloc::format!("action {a} not in 0..{n}"))),
        Action::Continuous(_) => Err(Error::InvalidAction("continuous action for a discrete space".into())),
    }
}

fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Episodic wrapper around a tabular MDP. Observations are one-hot states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEnv {
    mdp: TabularMdp,
    horizon: usize,
    state: usize,
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl ChainEnv {
    pub fn new(mdp: TabularMdp, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(Self {
            mdp,
            horizon,
            state: 0,
            steps: 0,
            done: true,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Environment for ChainEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: self.mdp.n_states(),
            action_space: ActionSpace::Discrete(self.mdp.n_actions()),
            max_episode_steps: self.horizon,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = sample_categorical(self.mdp.initial_distribution(), &mut self.rng);
        self.steps = 0;
        self.done = false;
        one_hot(self.state, self.mdp.n_states())
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(Error::Terminated);
        }
        let a = discrete_action(action, self.mdp.n_actions())?;
        let reward = self.mdp.reward(self.state, a);
        self.state = sample_categorical(self.mdp.next_distribution(self.state, a), &mut self.rng);
        self.steps += 1;
        let success = self.mdp.is_terminal(self.state);
        self.done = success || self.steps >= self.horizon;
        Ok(Step {
            observation: one_hot(self.state, self.mdp.n_states()),
            reward,
            done: self.done,
            success,
        })
    }
}

pub const GRID_SIZE: usize = 12;
pub const GRID_HORIZON: usize = 400;

/// Agent starts in the top-left cell; entering the bottom-right cell pays 1
/// and ends the episode. Every other step pays 0. Actions: up, down, left,
/// right; moves into a wall leave the agent in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseGrid {
    row: usize,
    col: usize,
    steps: usize,
    done: bool,
}

impl Default for SparseGrid {
    fn default() -> Self {
        Self::new()
    }
}

impl SparseGrid {
    pub const START: (usize, usize) = (0, 0);
    pub const GOAL: (usize, usize) = (GRID_SIZE - 1, GRID_SIZE - 1);

    pub fn new() -> Self {
        Self {
            row: Self::START.0,
            col: Self::START.1,
            steps: 0,
            done: true,
        }
    }

    pub fn position(&self) -> (usize, usize) {
        (self.row, self.col)
    }

    fn observation(&self) -> Vec<f64> {
        one_hot(self.row * GRID_SIZE + self.col, GRID_SIZE * GRID_SIZE)
    }
}

impl Environment for SparseGrid {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: GRID_SIZE * GRID_SIZE,
            action_space: ActionSpace::Discrete(4),
            max_episode_steps: GRID_HORIZON,
        }
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        (self.row, self.col) = Self::START;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        if self.done {
            return Err(Error::Terminated);
        }
        match discrete_action(action, 4)? {
            0 => self.row = self.row.saturating_sub(1),
            1 => self.row = (self.row + 1).min(GRID_SIZE - 1),
            2 => self.col = self.col.saturating_sub(1),
            _ => self.col = (self.col + 1).min(GRID_SIZE - 1),
        }
        self.steps += 1;
        let success = (self.row, self.col) == Self::GOAL;
        self.done = success || self.steps >= GRID_HORIZON;
        Ok(Step {
            observation: self.observation(),
            reward: if success { 1.0 } else { 0.0 },
            done: self.done,
            success,
        })
    }
}

/// Cart-pole constants (the classic control benchmark values).
pub mod cartpole {
    pub const GRAVITY: f64 = 9.8;
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_MASS: f64 = 0.1;
    /// Half the pole length.
    pub const POLE_HALF_LENGTH: f64 = 0.5;
    pub const FORCE_MAG: f64 = 10.0;
    /// Euler integration step, seconds.
    pub const TAU: f64 = 0.02;
    /// 12 degrees.
    pub const THETA_LIMIT: f64 = 12.0 * 2.0 * core::f64::consts::PI / 360.0;
    pub const X_LIMIT: f64 = 2.4;
    pub const HORIZON: usize = 500;
    /// Reset draws every state component uniformly from `[-RESET_RANGE, RESET_RANGE]`.
    pub const RESET_RANGE: f64 = 0.05;
}

/// Inverted pendulum on a cart. Observation `[x, ẋ, θ, θ̇]`; reward +1 for
/// every step including the last; the episode ends when the pole leaves
/// ±12° or the cart leaves ±2.4, or after 500 steps (counted as success).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartPoleLike {
    state: [f64; 4],
    steps: usize,
    done: bool,
    continuous: bool,
}

impl Default for CartPoleLike {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPoleLike {
    /// Two actions: push left, push right.
    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            steps: 0,
            done: true,
            continuous: false,
        }
    }

    /// One continuous action in `[-1, 1]` scaling the push force.
    pub fn continuous() -> Self {
        Self {
            continuous: true,
            ..Self::new()
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    fn force(&self, action: &Action) -> Result<f64> {
        use cartpole::FORCE_MAG;
        if self.continuous {
            match action {
                Action::Continuous(a) if a.len() == 1 && (-1.0..=1.0).contains(&a[0]) => Ok(FORCE_MAG * a[0]),
                Action::Continuous(a) => Err(Error::InvalidAction(alloc::format!(
                    "expected one value in [-1, 1], got {a:?}"
                ))),
                Action::Discrete(_) => Err(Error::InvalidAction("discrete action for a continuous space".into())),
            }
        } else {
            Ok(if discrete_action(action, 2)? == 1 { FORCE_MAG } else { -FORCE_MAG })
        }
    }
}

impl Environment for CartPoleLike {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: 4,
            action_space: if self.continuous {
                ActionSpace::Continuous(1)
            } else {
                ActionSpace::Discrete(2)
            },
            max_episode_steps: cartpole::HORIZON,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in self.state.iter_mut() {
            *x = rng.random_range(-cartpole::RESET_RANGE..=cartpole::RESET_RANGE);
        }
        self.steps = 0;
        self.done = false;
        self.state.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        use cartpole::*;
        if self.done {
            return Err(Error::Terminated);
        }
        let force = self.force(action)?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let total_mass = CART_MASS + POLE_MASS;
        let pole_moment = POLE_MASS * POLE_HALF_LENGTH;
        let (sin_t, cos_t) = (sin(theta), cos(theta));
        let temp = (force + pole_moment * theta_dot * theta_dot * sin_t) / total_mass;
        let theta_acc = (GRAVITY * sin_t - cos_t * temp)
            / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t * cos_t / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos_t / total_mass;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        self.steps += 1;
        let failed = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        let timed_out = self.steps >= HORIZON;
        self.done = failed || timed_out;
        Ok(Step {
            observation: self.state.to_vec(),
            reward: 1.0,
            done: self.done,
            success: timed_out && !failed,
        })
    }
}

/// Any of the shipped environments, for configuration-driven runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnyEnv {
    Chain(ChainEnv),
    Grid(SparseGrid),
    CartPole(CartPoleLike),
}

impl Environment for AnyEnv {
    fn spec(&self) -> EnvSpec {
        match self {
            AnyEnv::Chain(e) => e.spec(),
            AnyEnv::Grid(e) => e.spec(),
            AnyEnv::CartPole(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        match self {
            AnyEnv::Chain(e) => e.reset(seed),
            AnyEnv::Grid(e) => e.reset(seed),
            AnyEnv::CartPole(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        match self {
            AnyEnv::Chain(e) => e.step(action),
            AnyEnv::Grid(e) => e.step(action),
            AnyEnv::CartPole(e) => e.step(action),
        }
    }
}
