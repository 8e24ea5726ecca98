//! SPSA calibration of simulator parameters against observed travel times,
//! and the up-sampling baselines used for comparison.

mod baseline;
mod loss;
mod spsa;

pub use baseline::{baseline_params, evaluate_trips, run_baseline, upsample_trips, BaselineKind, SimMetrics, SimObjective};
pub use loss::{match_trips, trip_loss, MatchReport, MatchedPair, ObservedTrip};
pub use spsa::{
    estimate_gains, spsa_calibrate, write_calibration_log, Bounds, CalibrationRun, CountingObjective, Evaluation, FnObjective,
    GainSchedule, IterationRecord, Objective, RunStatus, SpsaSettings, Tolerance,
};

use crate::mesosim::{ParamBox, SimError};

#[derive(Debug, thiserror::Error)]
pub enum CalibError {
    #[error("invalid gain schedule: {0}")]
    InvalidGains(String),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("invalid parameter bounds")]
    InvalidBounds,
    #[error("initial parameters lie outside the bounds")]
    OutOfBounds,
    #[error("expected a parameter vector of the calibrated length, got {0} entries")]
    Dimension(usize),
    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,
    #[error("no observed trip matched a simulated trip ({} observed)", .0.observed)]
    NoMatches(MatchReport),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<&ParamBox> for Bounds {
    fn from(b: &ParamBox) -> Self {
        Bounds {
            lower: b.lower.to_vec(),
            upper: b.upper.to_vec(),
        }
    }
}
