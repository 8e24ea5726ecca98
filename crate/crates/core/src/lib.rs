//! Trajectory-driven calibration of mesoscopic traffic simulation.
//!
//! The crate covers the whole chain from map-matched vehicle trajectories to
//! a calibrated simulator:
//!
//! * [`netmodel`]: road network, paths, zones, time-of-day schedule and the
//!   OD-path / link-path incidence matrices.
//! * [`ingest`]: trajectory loading, abnormal-trip filtering, speed-limit
//!   re-estimation and penetration-rate inversion.
//! * [`clustering`]: GMM demand zoning, path-set reduction by weighted
//!   Jaccard similarity and the per-interval assignment map.
//! * [`flowest`]: the path-flow quadratic program and its ADMM solver.
//! * [`mesosim`]: a point-queue mesoscopic simulator.
//! * [`calibrate`]: SPSA calibration of simulator parameters and the
//!   up-sampling baselines.
//! * [`scenario`] and [`pipeline`]: a synthetic ground-truth scenario and the
//!   end-to-end driver.

pub mod calibrate;
pub mod clustering;
pub mod flowest;
pub mod ingest;
pub mod mesosim;
pub mod netmodel;
pub mod pipeline;
pub mod scenario;
pub mod sparse;
