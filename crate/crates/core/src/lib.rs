//! Offloading dependent-task applications between a user device and an edge
//! server.
//!
//! The crate covers the whole loop: random application DAGs ([`generator`]),
//! the four-resource latency model that doubles as an RL environment
//! ([`sim`]), reference schedulers ([`baselines`]), a small reverse-mode
//! autodiff engine ([`autodiff`]), a transformer-encoder actor-critic
//! ([`policy`]) trained with PPO ([`ppo`]), and experiment plumbing
//! ([`harness`]).

// `!(x > 0.0)` is how range checks here also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod dag;
pub mod generator;
pub mod harness;
pub mod policy;
pub mod ppo;
pub mod rng;
pub mod sim;
