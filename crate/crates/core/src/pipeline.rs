//! End-to-end driver: trajectories in, calibrated simulator and comparison
//! against the up-sampling baselines out.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    estimate_gains, evaluate_trips, match_trips, run_baseline, spsa_calibrate, BaselineKind, Bounds, CalibError, CalibrationRun,
    GainSchedule, ObservedTrip, RunStatus, SimMetrics, SimObjective, SpsaSettings, Tolerance,
};
use crate::clustering::{
    assign_zones, build_assignment_map, cluster_paths, fit_gmm, group_observed_paths, label_endpoints, select_k_by_bic, AssignmentMap,
    ClusterError, EmSettings, GmmModel, LabeledTrip, Point,
};
use crate::flowest::{estimate_all_tods, round_path_flows, tod_report, AdmmSettings, FlowError, FlowProblem, FlowSolution, TodReport};
use crate::ingest::{
    estimate_speed_limits, filter_abnormal, label_tods, FilterReason, IngestError, PenetrationEstimate, TotalTripsPrior, TrajectoryRecord,
};
use crate::mesosim::{run_simulation, ParamBox, RouteTable, SimError, SimParams, SimResult, SimTrip, PARAM_NAMES};
use crate::netmodel::{
    build_incidence, zone_lookup, IncidenceSet, LinkIdx, Network, NetworkError, OdPair, Path, TodInterval, TodSchedule, Zone,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no usable data: {0}")]
    Empty(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Calibrate(#[from] CalibError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub penetration: f64,
    pub tod: Vec<TodInterval>,
    pub reestimate_speeds: bool,
    pub speed_percentile: f64,
    pub speed_min_obs: usize,
    /// Fixed zone count; `None` selects it by BIC over `gmm_k_min..=gmm_k_max`.
    pub gmm_k: Option<usize>,
    pub gmm_k_min: usize,
    pub gmm_k_max: usize,
    pub cut_threshold: f64,
    pub gamma: f64,
    pub rho: f64,
    pub admm: AdmmSettings,
    pub theta0: SimParams,
    pub param_box: ParamBox,
    pub spsa_max_iter: usize,
    pub spsa_min_iter: usize,
    pub spsa_tolerance: Tolerance,
    /// Fixed gains; `None` derives them from the objective at `theta0`.
    pub gains: Option<GainSchedule>,
    pub gain_replicates: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            penetration: 0.075,
            tod: TodSchedule::default().intervals().to_vec(),
            reestimate_speeds: true,
            speed_percentile: crate::ingest::DEFAULT_SPEED_PERCENTILE,
            speed_min_obs: crate::ingest::DEFAULT_MIN_OBS,
            gmm_k: None,
            gmm_k_min: 2,
            gmm_k_max: 8,
            cut_threshold: crate::clustering::DEFAULT_CUT_THRESHOLD,
            gamma: crate::flowest::DEFAULT_GAMMA,
            rho: crate::flowest::DEFAULT_RHO,
            admm: AdmmSettings::default(),
            theta0: SimParams::default(),
            param_box: ParamBox::default(),
            spsa_max_iter: 40,
            spsa_min_iter: 10,
            spsa_tolerance: Tolerance::default(),
            gains: None,
            gain_replicates: 5,
            seed: 7,
        }
    }
}

impl PipelineConfig {
    pub fn schedule(&self) -> Result<TodSchedule, PipelineError> {
        Ok(TodSchedule::new(self.tod.clone())?)
    }

    pub fn penetration_estimate(&self) -> Result<PenetrationEstimate, PipelineError> {
        Ok(PenetrationEstimate::new(self.penetration)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        self.penetration_estimate()?;
        self.schedule()?;
        if !(self.speed_percentile > 0.0 && self.speed_percentile < 1.0) {
            return bad("speed_percentile must lie in (0, 1)");
        }
        match self.gmm_k {
            Some(0) => return bad("gmm_k must be at least 1"),
            None if self.gmm_k_min == 0 || self.gmm_k_min > self.gmm_k_max => {
                return bad("gmm_k_min..=gmm_k_max must be a non-empty range from 1")
            }
            _ => {}
        }
        if !(self.cut_threshold > 0.0 && self.cut_threshold < 1.0) {
            return bad("cut_threshold must lie in (0, 1)");
        }
        if !(self.gamma >= 0.0 && self.rho >= 0.0) {
            return bad("gamma and rho must be non-negative");
        }
        self.admm.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        ParamBox::new(self.param_box.lower, self.param_box.upper).map_err(|e| PipelineError::Config(e.to_string()))?;
        self.theta0.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !self.param_box.contains(&self.theta0.to_vector()) {
            return bad("theta0 lies outside param_box");
        }
        if self.spsa_max_iter == 0 {
            return bad("spsa_max_iter must be at least 1");
        }
        match self.spsa_tolerance {
            Tolerance::Absolute(e) | Tolerance::Relative(e) if e > 0.0 => {}
            _ => return bad("spsa_tolerance must be positive"),
        }
        if let Some(g) = &self.gains {
            g.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if self.gain_replicates < 2 {
            return bad("gain_replicates must be at least 2");
        }
        Ok(())
    }
}

pub struct IngestOutput {
    /// Kept records, TOD-labelled.
    pub records: Vec<TrajectoryRecord>,
    pub removed: Vec<(TrajectoryRecord, FilterReason)>,
    /// Network with re-estimated speed limits when enabled.
    pub network: Network,
    pub prior: TotalTripsPrior,
    pub days: usize,
}

pub fn run_ingest(network: &Network, records: Vec<TrajectoryRecord>, cfg: &PipelineConfig) -> Result<IngestOutput, PipelineError> {
    let schedule = cfg.schedule()?;
    let penetration = cfg.penetration_estimate()?;
    let (mut kept, removed) = filter_abnormal(records);
    if kept.is_empty() {
        return Err(PipelineError::Empty("every trajectory was filtered out".into()));
    }
    label_tods(&mut kept, &schedule);
    let network = if cfg.reestimate_speeds {
        estimate_speed_limits(&kept, network, cfg.speed_percentile, cfg.speed_min_obs)
    } else {
        network.clone()
    };
    let prior = TotalTripsPrior::from_records(&kept, &schedule, &penetration);
    let days = kept.iter().map(|r| r.day.as_str()).collect::<BTreeSet<_>>().len();
    log::info!("ingest: kept {} trips, removed {}", kept.len(), removed.len());
    Ok(IngestOutput {
        records: kept,
        removed,
        network,
        prior,
        days,
    })
}

pub struct ClusterOutput {
    pub gmm: GmmModel,
    pub zones: Vec<Zone>,
    /// Representative paths ordered by id.
    pub paths: Vec<Path>,
    pub incidence: Arc<IncidenceSet>,
    /// Observed trips relabelled to representative paths.
    pub observed: Vec<ObservedTrip>,
    /// One map per schedule interval.
    pub assignment: Vec<AssignmentMap>,
    /// Scaled per-day link counts per interval.
    pub link_counts: BTreeMap<u8, BTreeMap<LinkIdx, f64>>,
    /// Records dropped because an endpoint fell outside every zone.
    pub unzoned: usize,
}

pub fn run_cluster(
    network: &Network,
    records: &[TrajectoryRecord],
    days: usize,
    cfg: &PipelineConfig,
) -> Result<ClusterOutput, PipelineError> {
    let schedule = cfg.schedule()?;
    let penetration = cfg.penetration_estimate()?;
    let points: Vec<Point> = records
        .iter()
        .flat_map(|r| [[r.origin.0, r.origin.1], [r.destination.0, r.destination.1]])
        .collect();
    let em = EmSettings::default();
    let fit = match cfg.gmm_k {
        Some(k) => fit_gmm(&points, k, cfg.seed, &em)?,
        None => select_k_by_bic(&points, cfg.gmm_k_min..=cfg.gmm_k_max, cfg.seed, &em)?,
    };
    let endpoints = label_endpoints(network, &fit.model, &points);
    let zones = assign_zones(network, &endpoints);
    let lookup = zone_lookup(network, &zones)?;
    let zone_of = |x: f64, y: f64| network.nearest_link(x, y).and_then(|l| lookup[l.0]);

    let mut ods: Vec<Option<OdPair>> = Vec::with_capacity(records.len());
    for r in records {
        let od = match (zone_of(r.origin.0, r.origin.1), zone_of(r.destination.0, r.destination.1)) {
            (Some(o), Some(d)) => Some(OdPair::new(o.0, d.0)),
            _ => None,
        };
        ods.push(od);
    }
    let unzoned = ods.iter().filter(|o| o.is_none()).count();
    let groups = group_observed_paths(records.iter().zip(&ods).filter_map(|(r, od)| od.map(|od| (od, r.links.as_slice()))));
    if groups.is_empty() {
        return Err(PipelineError::Empty("no trip has both endpoints in a zone".into()));
    }
    let lengths: Vec<f64> = network.links().iter().map(|l| l.length).collect();
    let set = cluster_paths(groups, &lengths, cfg.cut_threshold);
    let paths = set.representative_paths();
    let incidence = Arc::new(build_incidence(network, &paths, &zones)?);

    let mut observed = Vec::new();
    let mut labeled = Vec::new();
    for (r, od) in records.iter().zip(&ods) {
        let Some(od) = *od else { continue };
        let path = set.relabel(od, &r.links).expect("every grouped sequence has a representative");
        let tod = r.tod.unwrap_or_else(|| schedule.interval_of(r.departure()));
        labeled.push(LabeledTrip { od, path, tod });
        observed.push(ObservedTrip {
            trip_id: r.trip_id.clone(),
            path,
            departure: r.departure(),
            travel_time: r.travel_time,
            tod,
        });
    }
    let assignment = schedule
        .intervals()
        .iter()
        .map(|iv| build_assignment_map(&labeled, iv.index, &incidence))
        .collect::<Result<Vec<_>, _>>()?;

    let by_id: HashMap<_, _> = paths.iter().map(|p| (p.id, p)).collect();
    let mut link_counts: BTreeMap<u8, BTreeMap<LinkIdx, f64>> = BTreeMap::new();
    for o in &observed {
        let scale = 1.0 / penetration.rate_for(o.tod) / days.max(1) as f64;
        let counts = link_counts.entry(o.tod).or_default();
        for &l in &by_id[&o.path].links {
            *counts.entry(l).or_default() += scale;
        }
    }
    log::info!(
        "cluster: {} zones, {} OD pairs, {} representative paths",
        zones.len(),
        incidence.num_od(),
        paths.len()
    );
    Ok(ClusterOutput {
        gmm: fit.model,
        zones,
        paths,
        incidence,
        observed,
        assignment,
        link_counts,
        unzoned,
    })
}

pub struct FlowOutput {
    pub problems: Vec<FlowProblem>,
    pub solutions: Vec<Option<FlowSolution>>,
    pub reports: Vec<TodReport>,
    pub trips: Vec<SimTrip>,
}

impl FlowOutput {
    pub fn estimated_total(&self, tod: u8) -> Option<f64> {
        self.solutions.iter().flatten().find(|s| s.tod == tod).map(|s| s.x.iter().sum())
    }
}

pub fn build_flow_problems(
    network: &Network,
    incidence: &Arc<IncidenceSet>,
    assignment: &[AssignmentMap],
    link_counts: &BTreeMap<u8, BTreeMap<LinkIdx, f64>>,
    prior: &TotalTripsPrior,
    cfg: &PipelineConfig,
) -> Result<Vec<FlowProblem>, PipelineError> {
    let schedule = cfg.schedule()?;
    let empty = BTreeMap::new();
    schedule
        .intervals()
        .iter()
        .map(|iv| {
            let g = assignment
                .iter()
                .find(|g| g.tod == iv.index)
                .ok_or_else(|| PipelineError::Empty(format!("no assignment map for interval {}", iv.index)))?;
            let counts = link_counts.get(&iv.index).unwrap_or(&empty);
            let mut p = FlowProblem::with_defaults(network, incidence.clone(), iv, g.g.clone(), prior.get(iv.index), counts);
            p.gamma = cfg.gamma;
            p.rho = cfg.rho;
            Ok(p)
        })
        .collect()
}

/// Rounded path flows become trips with departures spread uniformly at
/// random over their interval.
pub fn build_trip_table(solutions: &[Option<FlowSolution>], problems: &[FlowProblem], schedule: &TodSchedule, seed: u64) -> Vec<SimTrip> {
    let mut trips = Vec::new();
    for (sol, prob) in solutions.iter().zip(problems) {
        let Some(sol) = sol else { continue };
        let Some(iv) = schedule.get(sol.tod) else { continue };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(sol.tod) << 32));
        let rounded = round_path_flows(&sol.y, &prob.path_upper);
        for (m, &count) in rounded.y.iter().enumerate() {
            let path = prob.incidence.path_ids[m];
            for _ in 0..count {
                trips.push(SimTrip {
                    trip_id: trips.len() as u64,
                    path,
                    departure: rng.random_range(iv.start_s()..iv.end_s()),
                });
            }
        }
    }
    trips
}

pub fn run_flow(
    network: &Network,
    incidence: &Arc<IncidenceSet>,
    assignment: &[AssignmentMap],
    link_counts: &BTreeMap<u8, BTreeMap<LinkIdx, f64>>,
    prior: &TotalTripsPrior,
    cfg: &PipelineConfig,
) -> Result<FlowOutput, PipelineError> {
    let schedule = cfg.schedule()?;
    let problems = build_flow_problems(network, incidence, assignment, link_counts, prior, cfg)?;
    let results = estimate_all_tods(&problems, &cfg.admm);
    let reports: Vec<TodReport> = problems.iter().zip(&results).map(|(p, r)| tod_report(p, r)).collect();
    for r in &reports {
        if let Some(e) = &r.error {
            log::warn!("interval {}: {e}", r.tod);
        }
    }
    let solutions: Vec<Option<FlowSolution>> = results.into_iter().map(Result::ok).collect();
    if solutions.iter().all(Option::is_none) {
        return Err(PipelineError::Empty("flow estimation failed in every interval".into()));
    }
    let trips = build_trip_table(&solutions, &problems, &schedule, cfg.seed);
    log::info!("estimate-flow: {} trips in the table", trips.len());
    Ok(FlowOutput {
        problems,
        solutions,
        reports,
        trips,
    })
}

/// Observations departing in a main interval.
pub fn main_observations(observed: &[ObservedTrip], schedule: &TodSchedule) -> Vec<ObservedTrip> {
    observed.iter().filter(|o| schedule.is_main(o.tod)).cloned().collect()
}

pub struct CalibrationOutput {
    pub gains: GainSchedule,
    pub run: CalibrationRun,
    pub theta_opt: SimParams,
}

pub fn run_calibration(
    network: &Network,
    routes: &RouteTable,
    trips: &[SimTrip],
    observed_main: &[ObservedTrip],
    cfg: &PipelineConfig,
) -> Result<CalibrationOutput, PipelineError> {
    let schedule = cfg.schedule()?;
    let objective = SimObjective {
        network,
        routes,
        trips,
        observed: observed_main,
        schedule: &schedule,
        base: cfg.theta0,
    };
    let bounds = Bounds::from(&cfg.param_box);
    let theta0 = cfg.theta0.to_vector();
    let gains = match cfg.gains {
        Some(g) => g,
        None => estimate_gains(&objective, &theta0, &bounds, cfg.spsa_max_iter, cfg.gain_replicates, 2, cfg.seed)?,
    };
    let settings = SpsaSettings {
        max_iter: cfg.spsa_max_iter,
        tolerance: cfg.spsa_tolerance,
        min_iter: cfg.spsa_min_iter,
        seed: cfg.seed,
    };
    let run = spsa_calibrate(&objective, &theta0, &bounds, &gains, &settings)?;
    let theta_opt = objective.params(&run.theta_opt)?;
    log::info!("calibrate: {} iterations, status {:?}", run.iterations(), run.status);
    Ok(CalibrationOutput { gains, run, theta_opt })
}

/// Seed shared by every method in the final comparison.
pub fn evaluation_seed(cfg: &PipelineConfig) -> u64 {
    cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub mse: f64,
    pub throughput: f64,
    pub matched: usize,
    pub unmatched: usize,
    pub trips: usize,
}

impl ComparisonRow {
    fn new(method: &str, m: &SimMetrics) -> Self {
        Self {
            method: method.to_string(),
            mse: m.report.mse,
            throughput: m.throughput,
            matched: m.report.matched,
            unmatched: m.report.unmatched,
            trips: m.trips,
        }
    }
}

pub const OURS_LABEL: &str = "flow_estimation_calibrated";

/// Final runs of the calibrated pipeline and both baselines under one seed.
#[allow(clippy::too_many_arguments)]
pub fn run_comparison(
    network: &Network,
    routes: &RouteTable,
    trips: &[SimTrip],
    observed: &[ObservedTrip],
    theta_opt: &SimParams,
    cfg: &PipelineConfig,
) -> Result<(Vec<ComparisonRow>, SimResult), PipelineError> {
    let schedule = cfg.schedule()?;
    let penetration = cfg.penetration_estimate()?;
    let seed = evaluation_seed(cfg);
    let main = main_observations(observed, &schedule);
    let ours_sim = run_simulation(network, routes, trips, theta_opt, &schedule, seed)?;
    let ours = evaluate_trips(network, routes, trips, &main, &schedule, theta_opt, seed)?;
    let mut rows = vec![ComparisonRow::new(OURS_LABEL, &ours)];
    for kind in [BaselineKind::UpsampleCalibrated, BaselineKind::UpsampleMaxCapacity] {
        let m = run_baseline(
            kind,
            network,
            routes,
            observed,
            &main,
            &penetration,
            theta_opt,
            &cfg.param_box,
            &schedule,
            seed,
        )?;
        rows.push(ComparisonRow::new(kind.label(), &m));
    }
    Ok((rows, ours_sim))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TodBreakdownRow {
    pub tod: u8,
    pub label: String,
    pub matched: usize,
    pub observed_mean: f64,
    pub simulated_mean: f64,
    pub observed_std: f64,
    pub simulated_std: f64,
    pub mse: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Observed against simulated travel times per main interval.
pub fn tod_breakdown(sim: &SimResult, observed: &[ObservedTrip], schedule: &TodSchedule) -> Vec<TodBreakdownRow> {
    let pairs = match_trips(sim, observed, schedule);
    schedule
        .main_intervals()
        .iter()
        .map(|iv| {
            let (obs, simv): (Vec<f64>, Vec<f64>) = pairs
                .iter()
                .flatten()
                .filter(|p| p.tod == iv.index)
                .map(|p| (p.observed_time, p.simulated_time))
                .unzip();
            let (om, os) = mean_std(&obs);
            let (sm, ss) = mean_std(&simv);
            let mse = if obs.is_empty() {
                f64::NAN
            } else {
                obs.iter().zip(&simv).map(|(o, s)| (s - o).powi(2)).sum::<f64>() / obs.len() as f64
            };
            TodBreakdownRow {
                tod: iv.index,
                label: iv.label.clone(),
                matched: obs.len(),
                observed_mean: om,
                simulated_mean: sm,
                observed_std: os,
                simulated_std: ss,
                mse,
            }
        })
        .collect()
}

pub fn write_tod_breakdown<W: std::io::Write>(rows: &[TodBreakdownRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub theta: BTreeMap<String, f64>,
    pub iterations: usize,
    pub status: RunStatus,
    pub evaluations: usize,
    pub final_mse: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Wall-clock seconds per stage.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings: BTreeMap<String, f64>,
    pub flow: Vec<TodReport>,
    pub calibration: CalibrationSummary,
    /// Calibrated pipeline first, then the two baselines.
    pub comparison: Vec<ComparisonRow>,
    pub tod_breakdown: Vec<TodBreakdownRow>,
}

pub fn theta_map(p: &SimParams) -> BTreeMap<String, f64> {
    PARAM_NAMES.iter().zip(p.to_vector()).map(|(n, v)| (n.to_string(), v)).collect()
}

pub struct PipelineRun {
    pub ingest: IngestOutput,
    pub cluster: ClusterOutput,
    pub flow: FlowOutput,
    pub routes: RouteTable,
    pub calibration: CalibrationOutput,
    pub final_sim: SimResult,
    pub report: RunReport,
}

/// Runs every stage in memory.
pub fn run_pipeline(network: &Network, records: Vec<TrajectoryRecord>, cfg: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let ingest = run_ingest(network, records, cfg)?;
    lap("ingest", &mut timings);
    let cluster = run_cluster(&ingest.network, &ingest.records, ingest.days, cfg)?;
    lap("cluster", &mut timings);
    let flow = run_flow(
        &ingest.network,
        &cluster.incidence,
        &cluster.assignment,
        &cluster.link_counts,
        &ingest.prior,
        cfg,
    )?;
    lap("estimate_flow", &mut timings);
    let routes = RouteTable::new(&ingest.network, cluster.paths.clone())?;
    let main = main_observations(&cluster.observed, &schedule);
    let calibration = run_calibration(&ingest.network, &routes, &flow.trips, &main, cfg)?;
    lap("calibrate", &mut timings);
    let (comparison, final_sim) = run_comparison(
        &ingest.network,
        &routes,
        &flow.trips,
        &cluster.observed,
        &calibration.theta_opt,
        cfg,
    )?;
    lap("baseline", &mut timings);
    let tod_breakdown = tod_breakdown(&final_sim, &main, &schedule);
    let report = RunReport {
        timings,
        flow: flow.reports.clone(),
        calibration: CalibrationSummary {
            theta: theta_map(&calibration.theta_opt),
            iterations: calibration.run.iterations(),
            status: calibration.run.status,
            evaluations: calibration.run.evaluations,
            final_mse: comparison[0].mse,
            throughput: comparison[0].throughput,
        },
        comparison,
        tod_breakdown,
    };
    Ok(PipelineRun {
        ingest,
        cluster,
        flow,
        routes,
        calibration,
        final_sim,
        report,
    })
}
