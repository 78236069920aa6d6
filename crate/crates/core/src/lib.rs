//! Delay-aware packet-level network simulation and learning framework.
//!
//! The crate combines a deterministic discrete-event network simulator with
//! a closed-loop routing environment, telemetry-based observation assembly
//! that honors state propagation delays, a graph neural policy that predicts
//! log-space link weights for shortest-path forwarding, and the training
//! stack (imitation-learning pretraining, PPO / multi-agent PPO) on top.

pub mod config;
pub mod env;
pub mod error;
pub mod netsim;
pub mod nn;
pub mod policy;
pub mod telemetry;
pub mod topology;
pub mod traffic;
pub mod train;

pub use error::CoreError;
pub use topology::Topology;
