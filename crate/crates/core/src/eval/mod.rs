//! Metrics, reports, parameter sweeps and the synthetic benchmark.

pub mod benchmark;
pub mod metrics;
pub mod report;
pub mod sweep;
