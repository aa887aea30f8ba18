//! Scenario configuration, Monte Carlo execution, metrics and result files.

mod config;
mod metrics;
mod montecarlo;
mod output;
mod snr;

pub use config::{Algorithms, GridSpec, ScenarioConfig, TrackChoice};
pub use metrics::{compute_coverage, compute_rmse, coverage_indicators, inside_ellipse, CHI2_2_95};
pub use montecarlo::{
    noise_seed, run_montecarlo, run_seed, simulate, split_seed, AlgoSummary, RunResult, Scenario, SingleRun, TrackEstimate,
};
pub use output::{low_snr_comparison, write_experiment, write_snr_map, LOW_SNR_DB};
pub use snr::{min_snr_along, snr_db, snr_map, SnrMap};
