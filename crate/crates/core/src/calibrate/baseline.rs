use serde::{Deserialize, Serialize};

use super::loss::{trip_loss, MatchReport, ObservedTrip};
use super::spsa::{Evaluation, Objective};
use super::CalibError;
use crate::ingest::PenetrationEstimate;
use crate::mesosim::{apply_warmup_cooldown, run_simulation, ParamBox, RouteTable, SimParams, SimTrip, NUM_PARAMS};
use crate::netmodel::{Network, TodSchedule};

/// Simulator loss over a fixed trip table and observation set.
pub struct SimObjective<'a> {
    pub network: &'a Network,
    pub routes: &'a RouteTable,
    pub trips: &'a [SimTrip],
    /// Observations from the main intervals only.
    pub observed: &'a [ObservedTrip],
    pub schedule: &'a TodSchedule,
    /// Supplies the settings that are not calibrated.
    pub base: SimParams,
}

impl SimObjective<'_> {
    pub fn params(&self, theta: &[f64]) -> Result<SimParams, CalibError> {
        let v: [f64; NUM_PARAMS] = theta.try_into().map_err(|_| CalibError::Dimension(theta.len()))?;
        Ok(self.base.with_vector(&v))
    }

    pub fn run(&self, theta: &[f64], seed: u64) -> Result<SimMetrics, CalibError> {
        let params = self.params(theta)?;
        evaluate_trips(self.network, self.routes, self.trips, self.observed, self.schedule, &params, seed)
    }
}

impl Objective for SimObjective<'_> {
    fn evaluate(&self, theta: &[f64], seed: u64) -> Result<Evaluation, CalibError> {
        let m = self.run(theta, seed)?;
        Ok(Evaluation {
            loss: m.report.mse,
            total_travel_time: m.total_travel_time,
        })
    }
}

/// Throughput and travel-time error of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Loaded fraction over trips scheduled in the main intervals.
    pub throughput: f64,
    pub report: MatchReport,
    pub total_travel_time: f64,
    pub trips: usize,
}

pub fn evaluate_trips(
    network: &Network,
    routes: &RouteTable,
    trips: &[SimTrip],
    observed: &[ObservedTrip],
    schedule: &TodSchedule,
    params: &SimParams,
    seed: u64,
) -> Result<SimMetrics, CalibError> {
    let sim = run_simulation(network, routes, trips, params, schedule, seed)?;
    let report = trip_loss(&sim, observed, schedule)?;
    let main = apply_warmup_cooldown(&sim, schedule);
    Ok(SimMetrics {
        throughput: main.loaded_fraction(),
        report,
        total_travel_time: sim.total_travel_time(),
        trips: trips.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Up-sampled demand on the high-capacity corner of the box.
    UpsampleMaxCapacity,
    /// Up-sampled demand with the supplied calibrated parameters.
    UpsampleCalibrated,
}

impl BaselineKind {
    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::UpsampleMaxCapacity => "baseline_1_upsample_max_capacity",
            BaselineKind::UpsampleCalibrated => "baseline_2_upsample_calibrated",
        }
    }
}

/// Replicates every observed trip `round(1 / rate)` times at its observed
/// departure. Departure spread comes from the simulator's own jitter.
pub fn upsample_trips(observed: &[ObservedTrip], penetration: &PenetrationEstimate) -> Vec<SimTrip> {
    let mut out = Vec::new();
    for o in observed {
        let copies = (1.0 / penetration.rate_for(o.tod)).round().max(1.0) as usize;
        for _ in 0..copies {
            out.push(SimTrip {
                trip_id: out.len() as u64,
                path: o.path,
                departure: o.departure,
            });
        }
    }
    out
}

/// Parameters of a baseline. The high-capacity corner takes the largest
/// capacity scale and the smallest junction delay and headway from the
/// box, keeping the remaining parameters of `theta`.
pub fn baseline_params(kind: BaselineKind, theta: &SimParams, bounds: &ParamBox) -> SimParams {
    match kind {
        BaselineKind::UpsampleCalibrated => *theta,
        BaselineKind::UpsampleMaxCapacity => SimParams {
            capacity_scale: bounds.upper[0],
            junction_delay: bounds.lower[1],
            min_headway: bounds.lower[2],
            ..*theta
        },
    }
}

/// Runs an up-sampling baseline. `all_observed` drives the demand and
/// `eval_observed` (main intervals only) the error.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline(
    kind: BaselineKind,
    network: &Network,
    routes: &RouteTable,
    all_observed: &[ObservedTrip],
    eval_observed: &[ObservedTrip],
    penetration: &PenetrationEstimate,
    theta: &SimParams,
    bounds: &ParamBox,
    schedule: &TodSchedule,
    seed: u64,
) -> Result<SimMetrics, CalibError> {
    let trips = upsample_trips(all_observed, penetration);
    let params = baseline_params(kind, theta, bounds);
    evaluate_trips(network, routes, &trips, eval_observed, schedule, &params, seed)
}
