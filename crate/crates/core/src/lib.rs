//! Hybrid-parallel block-grid finite-volume proxy application.
//!
//! Simulated ranks, each with its own worker pool, advance a proxy hyperbolic
//! system on a periodic block grid. Ghost cells are refreshed every integrator
//! stage by one of two exchange strategies, and every run reports per-phase
//! timings, cellupdate throughput and energy figures.
//!
//! Module map:
//!
//! * [`grid`]: grid descriptor, Morton decomposition, block topology
//! * [`solver`]: reconstruction, Rusanov flux, Heun time stepping
//! * [`runtime`]: in-process ranks, non-blocking transport, worker pools
//! * [`exchange`]: halo plans and the fused / split-overlap strategies
//! * [`metrics`]: phase timers, cellupdates, energy arithmetic
//! * [`bench`]: single runs, scaling sweeps, load-imbalance injection
//! * [`cli`]: configuration, CSV output, the validation suite

pub mod bench;
pub mod cli;
pub mod exchange;
pub mod grid;
pub mod metrics;
pub mod runtime;
pub mod solver;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Runtime(#[from] runtime::RuntimeError),
    #[error(transparent)]
    Exchange(#[from] exchange::ExchangeError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("{0}")]
    Usage(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
