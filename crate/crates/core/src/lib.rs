//! Advantage estimation laboratory and PPO trainer with partial GAE.
//!
//! Everything here is `no_std` + `alloc`: the estimators, the rollout
//! bookkeeping that discards high-bias truncated advantages near the end of
//! a fixed-length segment and carries those samples into the next one, exact
//! tabular oracles, small stand-in environments, a hand-written MLP with
//! Adam, and the PPO training loop. File formats, the CLI and wall-clock
//! timing live in the `advest` crate.
#![cfg_attr(not(test), no_std)]
#![deny(missing_debug_implementations)]

extern crate alloc;

pub mod envs;
pub mod error;
pub mod estimators;
pub mod math;
pub mod nn;
pub mod oracle;
pub mod ppo;
pub mod trajectory;

pub use error::{Error, Result};
