//! Program-sketch tuning of frozen trading policies.
//!
//! A small symbolic program classifies the market into one of five trends
//! from three price indicators. Each trend carries a tuning directive that
//! reshapes a frozen policy's action distribution: a softmax temperature for
//! a single policy, or mixing weights for an ensemble. The sketch's numeric
//! holes are fitted by Gaussian-process Bayesian optimization on validation
//! data, and the tuned policy is evaluated in simulated order-execution and
//! stock-trading environments.

pub mod baselines;
pub mod env;
pub mod indicators;
pub mod market_data;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod policy;
pub mod sketch;
pub mod synthetic;
