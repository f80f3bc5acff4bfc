//! Deterministic simulator for distributed swarm learning: workers mix a
//! particle-swarm move with a local gradient step, report scores, and a
//! server aggregates the best models over a noisy fading channel.
//!
//! Every random draw comes from a stream keyed by `(seed, label, worker,
//! round)`, so runs replay bit for bit regardless of thread count.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x < y)` is deliberate: NaN must fail

pub mod channel;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod optimizer;
pub mod param;
pub mod rng;
pub mod robustness;
pub mod schedule;
pub mod selection;

pub use error::{Error, Result};
pub use harness::{ExperimentConfig, RoundMetrics, Simulation};
pub use param::ParamVector;
pub use rng::RngStream;
