//! Simulation study: configuration, metrics, the replicate runner and CSV
//! input/output.

pub mod config;
pub mod io;
pub mod metrics;
pub mod runner;

pub use config::SimConfig;
pub use metrics::{rimse_beta, rimse_y, score_flags, FlagScore};
pub use runner::{run_scenario, run_study, SimResult, Status};
