//! Trace-driven adaptive-bitrate streaming simulator and actor-learner
//! training toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`trace_store`]: bandwidth traces, synthetic generation and the loss model.
//! - [`stream_env`]: the chunk-level virtual player used as RL environment.
//! - [`qoe`]: per-chunk rewards and per-session QoE breakdowns.
//! - [`neural`]: a small MLP with an analytic backward pass.
//! - [`vtrace_agent`]: V-trace targets, advantages and policy/critic gradients.
//! - [`baselines`]: fixed-rule controllers (BB, RB, BOLA, RobustMPC).
//! - [`harness`]: training loop, evaluation sweeps and checkpoint selection.
//! - [`report`]: CSV / CDF / component report emission.
//! - [`config`]: the sectioned `key = value` configuration format.

pub mod baselines;
pub mod config;
pub mod error;
pub mod harness;
pub mod neural;
pub mod qoe;
pub mod report;
pub mod stream_env;
pub mod trace_store;
pub mod vtrace_agent;

pub use error::{Error, Result};
