//! Point-queue mesoscopic traffic simulator.
//!
//! Each link is a FIFO point queue: a vehicle's earliest exit is its entry
//! time plus the link length over its speed, and exits are spaced by the
//! link's service interval and capped per time-of-day interval. Queues have
//! no physical length, so there is no spillback between links.

mod engine;
mod io;
mod params;

pub use engine::{
    apply_warmup_cooldown, run_simulation, run_simulation_traced, throughput, LinkEvent, LinkStats, RouteTable, SimResult, SimTrip,
    TodLinkStats, TripOutcome, TripStatus, DAY_S, DRAIN_S, HORIZON_S, MIN_SPEED_FACTOR,
};
pub use io::{read_trip_table, write_link_flows, write_sim_result, write_trip_table};
pub use params::{ParamBox, SimParams, NUM_PARAMS, PARAM_NAMES};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulator parameters: {0}")]
    InvalidParams(String),
    #[error("path {0} is not valid on the network")]
    InvalidPath(u32),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
