//! Operator tooling around the causal-graph core: dataset IO and
//! validation, evaluation reports, model backends, batch trajectory
//! synthesis, and the reward service.

pub mod backends;
pub mod dataset;
pub mod eval;
pub mod export;
pub mod http;
pub mod runner;
pub mod scripted;
pub mod service;

pub use viscausal_core as core;
