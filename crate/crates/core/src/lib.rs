//! Cloud/edge split execution of iterative diffusion inference.
//!
//! - [`cost_model`]: latency prediction and the cloud-iteration solve.
//! - [`scheduler`]: admission, iteration groups and SLA-preserving batching.
//! - [`simulator`]: seeded population runs, batch-cost sweeps and projections.
//! - [`wire`]: binary protocol, server and client for executing a split job.
//! - [`probe`]: codec and transfer cost measurement.

pub mod cost_model;
pub mod probe;
pub mod scheduler;
pub mod simulator;
pub mod wire;
