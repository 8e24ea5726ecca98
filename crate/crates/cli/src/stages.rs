use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context as _;
use mesocal::calibrate::{write_calibration_log, GainSchedule, ObservedTrip, RunStatus};
use mesocal::clustering::read_assignment_maps;
use mesocal::flowest::{write_link_flows as write_flow_link_flows, write_od_flows, write_path_flows, TodReport};
use mesocal::ingest::{label_tods, load_trajectories, write_filter_report, write_trajectories, TotalTripsPrior, TrajectoryRecord};
use mesocal::mesosim::{
    read_trip_table, run_simulation, write_link_flows, write_sim_result, write_trip_table, RouteTable, SimParams, SimTrip, PARAM_NAMES,
};
use mesocal::netmodel::{
    build_incidence, load_network, load_zones, read_paths, write_network, write_paths, write_zones, IncidenceSet, LinkIdx, Network,
    Path as NetPath,
};
use mesocal::pipeline::{
    evaluation_seed, main_observations, run_calibration, run_cluster, run_comparison, run_flow, run_ingest, theta_map, tod_breakdown,
    write_tod_breakdown, CalibrationSummary, ComparisonRow, RunReport,
};
use mesocal::scenario::generate;
use serde::{Deserialize, Serialize};

use crate::config::{template, Loaded};
use crate::error::{runtime, CliError};
use crate::workspace::{write_atomic, StageRun, Workspace};

pub struct Context {
    pub config: Loaded,
    pub out: PathBuf,
}

impl Context {
    fn pipeline(&self) -> &mesocal::pipeline::PipelineConfig {
        &self.config.file.pipeline
    }

    fn open(&self) -> Result<Workspace, CliError> {
        Workspace::open(&self.out)
    }

    fn begin<'a>(&self, ws: &'a mut Workspace, stage: &'static str) -> Result<StageRun<'a>, CliError> {
        self.config.validate()?;
        log::info!("{stage}: start");
        Ok(ws.begin(stage, self.pipeline().seed, &self.config.digest_text()))
    }
}

fn csv_bytes<F>(f: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(runtime)?;
    Ok(buf)
}

fn serialize_rows<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn deserialize_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| path.display().to_string())
        .map_err(runtime)?;
    rdr.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| path.display().to_string())
        .map_err(runtime)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let f = File::open(path).with_context(|| path.display().to_string()).map_err(runtime)?;
    serde_json::from_reader(BufReader::new(f))
        .with_context(|| path.display().to_string())
        .map_err(runtime)
}

fn open_file(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(
        File::open(path).with_context(|| path.display().to_string()).map_err(runtime)?,
    ))
}

#[derive(Serialize, Deserialize)]
struct TotalRow {
    tod: u8,
    total_trips: f64,
}

#[derive(Serialize, Deserialize)]
struct LinkCountRow {
    tod: u8,
    link_id: String,
    count: f64,
}

#[derive(Serialize, Deserialize)]
struct IngestSummary {
    kept: usize,
    removed: usize,
    rejected: usize,
    days: usize,
}

#[derive(Serialize, Deserialize)]
struct ClusterSummary {
    zones: usize,
    od_pairs: usize,
    paths: usize,
    observed: usize,
    unzoned: usize,
}

#[derive(Serialize, Deserialize)]
struct SimulateSummary {
    requested: usize,
    completed: usize,
    loaded_fraction: f64,
    total_travel_time: f64,
    params: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct CalibrationRecord {
    gains: GainSchedule,
    status: RunStatus,
    iterations: usize,
    evaluations: usize,
    retries: usize,
    theta_initial: BTreeMap<String, f64>,
    theta: BTreeMap<String, f64>,
}

pub fn template_cmd() -> Result<(), CliError> {
    print!("{}", template());
    Ok(())
}

/// Writes a synthetic scenario and a config pointing at it.
pub fn generate_cmd(ctx: &Context) -> Result<(), CliError> {
    let scen = generate(&ctx.config.file.scenario).map_err(|e| match e {
        mesocal::scenario::ScenarioError::Invalid(m) => CliError::Invalid(m),
        other => runtime(other),
    })?;
    let inputs = ctx.out.join("inputs");
    let mut links = Vec::new();
    let mut nodes = Vec::new();
    write_network(&scen.network, &mut links, &mut nodes).map_err(runtime)?;
    let traj = csv_bytes(|b| Ok(write_trajectories(&scen.observed, &scen.network, b)?))?;
    let planted: Vec<TotalRow> = scen
        .planted_totals
        .iter()
        .map(|(&tod, &total_trips)| TotalRow { tod, total_trips })
        .collect();
    let io = |p: PathBuf, b: &[u8]| write_atomic(&p, b).with_context(|| p.display().to_string()).map_err(runtime);
    io(inputs.join("links.csv"), &links)?;
    io(inputs.join("nodes.csv"), &nodes)?;
    io(inputs.join("trajectories.csv"), &traj)?;
    io(inputs.join("planted_totals.csv"), &serialize_rows(&planted)?)?;
    let mut file = ctx.config.file.clone();
    file.inputs = Default::default();
    file.pipeline.penetration = file.scenario.penetration;
    let text = toml::to_string(&file).map_err(runtime)?;
    io(ctx.out.join("config.toml"), text.as_bytes())?;
    log::info!(
        "generate: {} planted trips, {} trajectories",
        scen.trips.len(),
        scen.observed
            .iter()
            .map(|r| &r.trip_id)
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    );
    Ok(())
}

pub fn ingest(ctx: &Context) -> Result<(), CliError> {
    let mut ws = ctx.open()?;
    let cfg = ctx.pipeline().clone();
    let inputs = &ctx.config.file.inputs;
    let mut run = ctx.begin(&mut ws, "ingest")?;
    let links = run.external(&ctx.config.input(&inputs.links, &ctx.out))?;
    let nodes = run.external(&ctx.config.input(&inputs.nodes, &ctx.out))?;
    let traj = run.external(&ctx.config.input(&inputs.trajectories, &ctx.out))?;
    let network = load_network(&links, &nodes).map_err(runtime)?;
    let load = load_trajectories(open_file(&traj)?, &network).map_err(runtime)?;
    let rejected = load.rejected.len();
    let out = run_ingest(&network, load.records, &cfg)?;

    let mut l = Vec::new();
    let mut n = Vec::new();
    write_network(&out.network, &mut l, &mut n).map_err(runtime)?;
    run.write("ingest/links.csv", &l)?;
    run.write("ingest/nodes.csv", &n)?;
    let t = csv_bytes(|b| Ok(write_trajectories(&out.records, &out.network, b)?))?;
    run.write("ingest/trajectories.csv", &t)?;
    let f = csv_bytes(|b| Ok(write_filter_report(&out.removed, b)?))?;
    run.write("ingest/filter_report.csv", &f)?;
    let totals: Vec<TotalRow> = out
        .prior
        .per_tod
        .iter()
        .map(|(&tod, &total_trips)| TotalRow { tod, total_trips })
        .collect();
    run.write("ingest/total_trips.csv", &serialize_rows(&totals)?)?;
    run.write_json(
        "ingest/summary.json",
        &IngestSummary {
            kept: out.records.len(),
            removed: out.removed.len(),
            rejected,
            days: out.days,
        },
    )?;
    run.finish()
}

fn read_network(run: &mut StageRun) -> Result<Network, CliError> {
    let links = run.artifact("ingest/links.csv")?;
    let nodes = run.artifact("ingest/nodes.csv")?;
    load_network(&links, &nodes).map_err(runtime)
}

fn read_net_paths(run: &mut StageRun, network: &Network) -> Result<Vec<NetPath>, CliError> {
    let p = run.artifact("cluster/paths.csv")?;
    read_paths(open_file(&p)?, network).map_err(runtime)
}

fn read_observed(run: &mut StageRun) -> Result<Vec<ObservedTrip>, CliError> {
    let p = run.artifact("cluster/observed_trips.csv")?;
    deserialize_rows(&p)
}

fn read_trips(run: &mut StageRun) -> Result<Vec<SimTrip>, CliError> {
    let p = run.artifact("flow/trip_table.csv")?;
    read_trip_table(open_file(&p)?).map_err(runtime)
}

fn read_theta(run: &mut StageRun, base: &SimParams) -> Result<SimParams, CliError> {
    let p = run.artifact("calibrate/theta.txt")?;
    let text = std::fs::read_to_string(&p).map_err(runtime)?;
    let parsed = SimParams::from_key_values(&text).map_err(runtime)?;
    Ok(SimParams {
        reroute_period: base.reroute_period,
        reroute_prob: base.reroute_prob,
        ..parsed
    })
}

pub fn cluster(ctx: &Context) -> Result<(), CliError> {
    let mut ws = ctx.open()?;
    let cfg = ctx.pipeline().clone();
    let schedule = cfg.schedule()?;
    let mut run = ctx.begin(&mut ws, "cluster")?;
    let network = read_network(&mut run)?;
    let summary: IngestSummary = read_json(&run.artifact("ingest/summary.json")?)?;
    let traj = run.artifact("ingest/trajectories.csv")?;
    let mut records: Vec<TrajectoryRecord> = load_trajectories(open_file(&traj)?, &network).map_err(runtime)?.records;
    label_tods(&mut records, &schedule);
    let out = run_cluster(&network, &records, summary.days, &cfg)?;

    let z = csv_bytes(|b| Ok(write_zones(&out.zones, &network, b)?))?;
    run.write("cluster/zones.csv", &z)?;
    let p = csv_bytes(|b| Ok(write_paths(&out.paths, &network, b)?))?;
    run.write("cluster/paths.csv", &p)?;
    let a = csv_bytes(|b| Ok(mesocal::clustering::write_assignment_maps(&out.assignment, &out.incidence, b)?))?;
    run.write("cluster/assignment.csv", &a)?;
    run.write("cluster/observed_trips.csv", &serialize_rows(&out.observed)?)?;
    let net = &network;
    let counts: Vec<LinkCountRow> = out
        .link_counts
        .iter()
        .flat_map(|(&tod, m)| {
            m.iter().map(move |(&l, &count)| LinkCountRow {
                tod,
                link_id: net.link(l).id.clone(),
                count,
            })
        })
        .collect();
    run.write("cluster/link_counts.csv", &serialize_rows(&counts)?)?;
    run.write_json("cluster/gmm.json", &out.gmm)?;
    run.write_json(
        "cluster/summary.json",
        &ClusterSummary {
            zones: out.zones.len(),
            od_pairs: out.incidence.num_od(),
            paths: out.paths.len(),
            observed: out.observed.len(),
            unzoned: out.unzoned,
        },
    )?;
    run.finish()
}

fn read_incidence(run: &mut StageRun, network: &Network) -> Result<Arc<IncidenceSet>, CliError> {
    let z = run.artifact("cluster/zones.csv")?;
    let zones = load_zones(open_file(&z)?, network).map_err(runtime)?;
    let paths = read_net_paths(run, network)?;
    Ok(Arc::new(build_incidence(network, &paths, &zones).map_err(runtime)?))
}

pub fn estimate_flow(ctx: &Context) -> Result<(), CliError> {
    let mut ws = ctx.open()?;
    let cfg = ctx.pipeline().clone();
    let schedule = cfg.schedule()?;
    let mut run = ctx.begin(&mut ws, "flow")?;
    let network = read_network(&mut run)?;
    let totals: Vec<TotalRow> = deserialize_rows(&run.artifact("ingest/total_trips.csv")?)?;
    let prior = TotalTripsPrior {
        per_tod: totals.into_iter().map(|r| (r.tod, r.total_trips)).collect(),
    };
    let incidence = read_incidence(&mut run, &network)?;
    let a = run.artifact("cluster/assignment.csv")?;
    let tods: Vec<u8> = schedule.intervals().iter().map(|iv| iv.index).collect();
    let assignment = read_assignment_maps(open_file(&a)?, &incidence, &tods).map_err(runtime)?;
    let rows: Vec<LinkCountRow> = deserialize_rows(&run.artifact("cluster/link_counts.csv")?)?;
    let mut link_counts: BTreeMap<u8, BTreeMap<LinkIdx, f64>> = BTreeMap::new();
    for r in rows {
        let l = network
            .link_by_id(&r.link_id)
            .ok_or_else(|| runtime(anyhow::anyhow!("link_counts.csv: unknown link {}", r.link_id)))?;
        link_counts.entry(r.tod).or_default().insert(l, r.count);
    }
    let out = run_flow(&network, &incidence, &assignment, &link_counts, &prior, &cfg)?;

    for (sol, prob) in out.solutions.iter().zip(&out.problems) {
        let Some(sol) = sol else { continue };
        let tod = sol.tod;
        let p = csv_bytes(|b| Ok(write_path_flows(sol, &prob.path_upper, &incidence, b)?))?;
        run.write(&format!("flow/path_flows_tod{tod}.csv"), &p)?;
        let o = csv_bytes(|b| Ok(write_od_flows(sol, &incidence, b)?))?;
        run.write(&format!("flow/od_flows_tod{tod}.csv"), &o)?;
        let l = csv_bytes(|b| Ok(write_flow_link_flows(sol, &network, b)?))?;
        run.write(&format!("flow/link_flows_tod{tod}.csv"), &l)?;
    }
    run.write_json("flow/flow_report.json", &out.reports)?;
    let t = csv_bytes(|b| Ok(write_trip_table(&out.trips, b)?))?;
    run.write("flow/trip_table.csv", &t)?;
    run.finish()
}

/// Simulates the estimated trip table once with the given parameters.
pub fn simulate(ctx: &Context, params: Option<&Path>) -> Result<(), CliError> {
    let mut ws = ctx.open()?;
    let cfg = ctx.pipeline().clone();
    let schedule = cfg.schedule()?;
    let mut run = ctx.begin(&mut ws, "simulate")?;
    let theta = match params {
        Some(p) => {
            let p = run.external(p)?;
            let text = std::fs::read_to_string(&p).map_err(runtime)?;
            let t = SimParams::from_key_values(&text).map_err(|e| CliError::Invalid(e.to_string()))?;
            t.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
            t
        }
        None => cfg.theta0,
    };
    let network = read_network(&mut run)?;
    let paths = read_net_paths(&mut run, &network)?;
    let trips = read_trips(&mut run)?;
    let routes = RouteTable::new(&network, paths).map_err(runtime)?;
    let sim = run_simulation(&network, &routes, &trips, &theta, &schedule, evaluation_seed(&cfg)).map_err(runtime)?;
    let r = csv_bytes(|b| Ok(write_sim_result(&sim, b)?))?;
    run.write("simulate/sim_result.csv", &r)?;
    let l = csv_bytes(|b| Ok(write_link_flows(&sim, &network, &schedule, b)?))?;
    run.write("simulate/link_flows.csv", &l)?;
    run.write_json(
        "simulate/summary.json",
        &SimulateSummary {
            requested: sim.requested(),
            completed: sim.completed(),
            loaded_fraction: sim.loaded_fraction(),
            total_travel_time: sim.total_travel_time(),
            params: theta_map(&theta),
        },
    )?;
    run.finish()
}

pub fn calibrate(ctx: &Context) -> Result<(), CliError> {
    let mut ws = ctx.open()?;
    let cfg = ctx.pipeline().clone();
    let schedule = cfg.schedule()?;
    let mut run = ctx.begin(&mut ws, "calibrate")?;
    let network = read_network(&mut run)?;
    let paths = read_net_paths(&mut run, &network)?;
    let trips = read_trips(&mut run)?;
    let observed = read_observed(&mut run)?;
    let routes = RouteTable::new(&network, paths).map_err(runtime)?;
    let main = main_observations(&observed, &schedule);
    let out = run_calibration(&network, &routes, &trips, &main, &cfg)?;

    let log = csv_bytes(|b| Ok(write_calibration_log(&out.run, &PARAM_NAMES, b)?))?;
    run.write("calibrate/calibration_log.csv", &log)?;
    run.write("calibrate/theta.txt", out.theta_opt.to_key_values().as_bytes())?;
    run.write_json(
        "calibrate/calibration.json",
        &CalibrationRecord {
            gains: out.gains,
            status: out.run.status,
            iterations: out.run.iterations(),
            evaluations: out.run.evaluations,
            retries: out.run.retries,
            theta_initial: theta_map(&cfg.theta0),
            theta: theta_map(&out.theta_opt),
        },
    )?;
    run.finish()
}

struct FinalInputs {
    network: Network,
    routes: RouteTable,
    trips: Vec<SimTrip>,
    observed: Vec<ObservedTrip>,
    theta: SimParams,
}

fn final_inputs(run: &mut StageRun, cfg: &mesocal::pipeline::PipelineConfig) -> Result<FinalInputs, CliError> {
    let network = read_network(run)?;
    let paths = read_net_paths(run, &network)?;
    let trips = read_trips(run)?;
    let observed = read_observed(run)?;
    let theta = read_theta(run, &cfg.theta0)?;
    let routes = RouteTable::new(&network, paths).map_err(runtime)?;
    Ok(FinalInputs {
        network,
        routes,
        trips,
        observed,
        theta,
    })
}

pub fn baseline(ctx: &Context) -> Result<(), CliError> {
    let mut ws = ctx.open()?;
    let cfg = ctx.pipeline().clone();
    let mut run = ctx.begin(&mut ws, "baseline")?;
    let f = final_inputs(&mut run, &cfg)?;
    let (rows, _) = run_comparison(&f.network, &f.routes, &f.trips, &f.observed, &f.theta, &cfg)?;
    run.write("baseline/comparison.csv", &serialize_rows(&rows)?)?;
    run.write_json("baseline/comparison.json", &rows)?;
    run.finish()
}

pub fn report(ctx: &Context) -> Result<(), CliError> {
    let mut ws = ctx.open()?;
    let cfg = ctx.pipeline().clone();
    let schedule = cfg.schedule()?;
    let mut run = ctx.begin(&mut ws, "report")?;
    let flow: Vec<TodReport> = read_json(&run.artifact("flow/flow_report.json")?)?;
    let calib: CalibrationRecord = read_json(&run.artifact("calibrate/calibration.json")?)?;
    let comparison: Vec<ComparisonRow> = read_json(&run.artifact("baseline/comparison.json")?)?;
    let f = final_inputs(&mut run, &cfg)?;
    let main = main_observations(&f.observed, &schedule);
    let sim = run_simulation(&f.network, &f.routes, &f.trips, &f.theta, &schedule, evaluation_seed(&cfg)).map_err(runtime)?;
    let breakdown = tod_breakdown(&sim, &main, &schedule);
    let ours = comparison
        .first()
        .ok_or_else(|| runtime(anyhow::anyhow!("comparison.json is empty")))?;
    let report = RunReport {
        timings: BTreeMap::new(),
        flow,
        calibration: CalibrationSummary {
            theta: calib.theta,
            iterations: calib.iterations,
            status: calib.status,
            evaluations: calib.evaluations,
            final_mse: ours.mse,
            throughput: ours.throughput,
        },
        comparison: comparison.clone(),
        tod_breakdown: breakdown,
    };
    let b = csv_bytes(|b| Ok(write_tod_breakdown(&report.tod_breakdown, b)?))?;
    run.write("report/tod_breakdown.csv", &b)?;
    run.write_json("report/report.json", &report)?;
    let timings: BTreeMap<&str, f64> = ws_timings(run.root())?;
    run.write_json("report/timings.json", &timings)?;
    for r in &report.comparison {
        println!("{:<36} mse {:>12.2}  throughput {:.4}", r.method, r.mse, r.throughput);
    }
    run.finish()
}

fn ws_timings(root: &Path) -> Result<BTreeMap<&'static str, f64>, CliError> {
    let ws = Workspace::open(root)?;
    let mut out = BTreeMap::new();
    for stage in ["ingest", "cluster", "flow", "simulate", "calibrate", "baseline"] {
        if let Some(r) = ws.manifest.stages.get(stage) {
            out.insert(stage, r.elapsed_s);
        }
    }
    Ok(out)
}

pub fn run_all(ctx: &Context) -> Result<(), CliError> {
    ingest(ctx)?;
    cluster(ctx)?;
    estimate_flow(ctx)?;
    calibrate(ctx)?;
    baseline(ctx)?;
    report(ctx)
}
