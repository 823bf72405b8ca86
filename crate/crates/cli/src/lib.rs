//! Batch entry points: ingest, fit, backtest, report and sketch checking.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
