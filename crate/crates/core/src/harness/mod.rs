//! Experiment harness: configuration, synthetic data, experiments,
//! invariant batteries and file formats used by the `distreg` binary.

pub mod config;
pub mod experiment;
pub mod io;
pub mod synthetic;

use crate::analysis::{
    identity_battery, identity_equal_case, lemma_battery, lemma_battery_uncoupled, BatteryResult,
};
use crate::error::Result;

pub use config::Config;
pub use experiment::{
    run_distributed_experiment, run_rate_experiment, DistributedReport, ExperimentConfig,
    ExperimentRow, RateReport,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData, SyntheticTruth};

/// Trial counts used by [`run_checks`].
pub const LEMMA_TRIALS: usize = 200;
pub const IDENTITY_TRIALS: usize = 100;
pub const BATTERY_MAX_DIM: usize = 12;

/// Runs the operator-norm and second-order batteries.
pub fn run_checks(seed: u64) -> Result<Vec<BatteryResult>> {
    Ok(vec![
        lemma_battery(LEMMA_TRIALS, BATTERY_MAX_DIM, seed)?,
        lemma_battery_uncoupled(50, BATTERY_MAX_DIM, seed)?,
        identity_battery(IDENTITY_TRIALS, BATTERY_MAX_DIM, seed)?,
        identity_equal_case(seed)?,
    ])
}
