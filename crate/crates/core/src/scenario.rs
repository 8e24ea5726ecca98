//! Synthetic ground truth: a grid city with planted zones, OD demand, route
//! shares and simulator parameters, observed through a sampled fleet.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::TrajectoryRecord;
use crate::mesosim::{run_simulation_traced, RouteTable, SimError, SimParams, SimResult, SimTrip, TripStatus};
use crate::netmodel::{grid_network, LinkIdx, Network, OdPair, Path, PathId, TodSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub grid_size: usize,
    pub block_m: f64,
    pub speed_mps: f64,
    pub lanes: u32,
    pub capacity_vph: Option<f64>,
    /// Zone centres as (row, column) grid nodes.
    pub zone_centers: Vec<(usize, usize)>,
    /// Trip ends fall on nodes within this many blocks of a centre.
    pub zone_radius: usize,
    /// Mean trips per hour per OD pair in each interval, in schedule order.
    pub hourly_demand: Vec<f64>,
    /// Per-OD demand multipliers are drawn from `[1 - spread, 1 + spread]`.
    pub od_spread: f64,
    pub penetration: f64,
    /// Standard deviation in metres of the noise on recorded endpoints.
    pub endpoint_noise_m: f64,
    pub theta: SimParams,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            grid_size: 8,
            block_m: 300.0,
            speed_mps: 13.4,
            lanes: 1,
            capacity_vph: Some(500.0),
            zone_centers: vec![(1, 1), (1, 6), (6, 1), (6, 6)],
            zone_radius: 1,
            hourly_demand: vec![30.0, 400.0, 180.0, 400.0, 150.0, 30.0],
            od_spread: 0.4,
            penetration: 0.075,
            endpoint_noise_m: 15.0,
            theta: SimParams {
                capacity_scale: 0.8,
                junction_delay: 4.0,
                min_headway: 2.5,
                speed_factor_mean: 0.9,
                speed_factor_std: 0.08,
                departure_jitter: 120.0,
                reroute_period: 0.0,
                reroute_prob: 0.0,
            },
            seed: 2024,
        }
    }
}

/// A planted trip and the zone pair it was generated for.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrip {
    pub trip: SimTrip,
    pub od: OdPair,
    pub tod: u8,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub network: Network,
    pub schedule: TodSchedule,
    /// Every distinct link sequence used by a planted trip.
    pub routes: RouteTable,
    pub trips: Vec<TruthTrip>,
    pub truth: SimResult,
    /// Sampled trajectories of completed trips.
    pub observed: Vec<TrajectoryRecord>,
    /// Planted trips per interval.
    pub planted_totals: BTreeMap<u8, f64>,
}

impl Scenario {
    pub fn planted_total(&self, tod: u8) -> f64 {
        self.planted_totals.get(&tod).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn grid_route(
    net_n: usize,
    links: &HashMap<(usize, usize), LinkIdx>,
    from: (usize, usize),
    to: (usize, usize),
    rows_first: bool,
) -> Vec<LinkIdx> {
    let toward = |a: usize, b: usize| if b > a { a + 1 } else { a - 1 };
    let mut nodes = vec![from];
    let (mut r, mut c) = from;
    for phase in [rows_first, !rows_first] {
        if phase {
            while r != to.0 {
                r = toward(r, to.0);
                nodes.push((r, c));
            }
        } else {
            while c != to.1 {
                c = toward(c, to.1);
                nodes.push((r, c));
            }
        }
    }
    nodes
        .windows(2)
        .map(|w| links[&(w[0].0 * net_n + w[0].1, w[1].0 * net_n + w[1].1)])
        .collect()
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

fn point_on_link<R: Rng>(net: &Network, link: LinkIdx, frac: f64, noise: f64, rng: &mut R) -> (f64, f64) {
    let l = net.link(link);
    let (a, b) = (net.node(l.from), net.node(l.to));
    (
        a.x + frac * (b.x - a.x) + noise * normal(rng),
        a.y + frac * (b.y - a.y) + noise * normal(rng),
    )
}

/// Builds the network and demand, simulates the ground truth and samples
/// the observed fleet. The sample holds exactly `round(penetration · n)`
/// completed trips of each (OD pair, interval) stratum.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    let schedule = TodSchedule::default();
    let n = config.grid_size;
    if n < 2 || config.zone_centers.len() < 2 {
        return Err(ScenarioError::Invalid("need a grid of size ≥ 2 and at least two zones".into()));
    }
    if config.hourly_demand.len() != schedule.len() {
        return Err(ScenarioError::Invalid(format!("hourly_demand needs {} entries", schedule.len())));
    }
    if !(config.penetration > 0.0 && config.penetration <= 1.0) {
        return Err(ScenarioError::Invalid("penetration must lie in (0, 1]".into()));
    }
    let r = config.zone_radius;
    if config.zone_centers.iter().any(|&(a, b)| a < r || b < r || a + r >= n || b + r >= n) {
        return Err(ScenarioError::Invalid("zone neighbourhoods must lie inside the grid".into()));
    }
    config.theta.validate()?;

    let network = grid_network(n, config.block_m, config.speed_mps, config.lanes, config.capacity_vph);
    let link_of: HashMap<(usize, usize), LinkIdx> = network
        .links()
        .iter()
        .enumerate()
        .map(|(i, l)| ((l.from.0, l.to.0), LinkIdx(i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let zones = config.zone_centers.len();
    let mut od_weight = BTreeMap::new();
    let mut rows_first_share = BTreeMap::new();
    for o in 0..zones {
        for d in 0..zones {
            if o != d {
                let od = OdPair::new(o as u32, d as u32);
                od_weight.insert(od, 1.0 + config.od_spread * rng.random_range(-1.0..=1.0));
                rows_first_share.insert(od, rng.random_range(0.2..0.8));
            }
        }
    }

    let node_near = |rng: &mut ChaCha8Rng, (cr, cc): (usize, usize)| -> (usize, usize) {
        let dr = rng.random_range(0..=2 * r);
        let dc = rng.random_range(0..=2 * r);
        (cr + dr - r, cc + dc - r)
    };

    let mut route_ids: HashMap<Vec<LinkIdx>, PathId> = HashMap::new();
    let mut paths = Vec::new();
    let mut trips = Vec::new();
    let mut planted_totals = BTreeMap::new();
    for iv in schedule.intervals() {
        let rate = config.hourly_demand[usize::from(iv.index) - 1];
        let mut total = 0.0;
        for (&od, &w) in &od_weight {
            let count = (rate * w * iv.hours()).round() as usize;
            for _ in 0..count {
                let from = node_near(&mut rng, config.zone_centers[od.origin.0 as usize]);
                let mut to = node_near(&mut rng, config.zone_centers[od.destination.0 as usize]);
                if to == from {
                    to = config.zone_centers[od.destination.0 as usize];
                }
                let rows_first = rng.random_bool(rows_first_share[&od]);
                let links = grid_route(n, &link_of, from, to, rows_first);
                let next_id = PathId(paths.len() as u32);
                let id = *route_ids.entry(links.clone()).or_insert_with(|| {
                    paths.push(Path {
                        id: next_id,
                        od,
                        links: links.clone(),
                    });
                    next_id
                });
                let departure = rng.random_range(iv.start_s()..iv.end_s());
                trips.push(TruthTrip {
                    trip: SimTrip {
                        trip_id: trips.len() as u64,
                        path: id,
                        departure,
                    },
                    od,
                    tod: iv.index,
                });
                total += 1.0;
            }
        }
        planted_totals.insert(iv.index, total);
    }

    let routes = RouteTable::new(&network, paths)?;
    let sim_trips: Vec<SimTrip> = trips.iter().map(|t| t.trip.clone()).collect();
    let sim_seed: u64 = rng.random();
    let (truth, events) = run_simulation_traced(&network, &routes, &sim_trips, &config.theta, &schedule, sim_seed)?;

    let mut entries: HashMap<u64, Vec<(f64, Option<f64>)>> = HashMap::new();
    for e in &events {
        entries.entry(e.trip_id).or_default().push((e.entry, e.exit));
    }

    // Stratified sample of completed trips.
    let mut strata: BTreeMap<(OdPair, u8), Vec<usize>> = BTreeMap::new();
    for (i, t) in trips.iter().enumerate() {
        if truth.trips[i].status == TripStatus::Completed {
            strata.entry((t.od, t.tod)).or_default().push(i);
        }
    }
    let mut picked = Vec::new();
    for members in strata.values() {
        let k = (config.penetration * members.len() as f64).round() as usize;
        let mut chosen: Vec<usize> = sample(&mut rng, members.len(), k).into_iter().map(|j| members[j]).collect();
        chosen.sort_unstable();
        picked.extend(chosen);
    }
    picked.sort_unstable();

    let mut observed = Vec::with_capacity(picked.len());
    for i in picked {
        let t = &trips[i];
        let path = routes.get(t.trip.path).expect("planted path");
        let mut ev = entries.remove(&t.trip.trip_id).unwrap_or_default();
        ev.sort_by(|a, b| a.0.total_cmp(&b.0));
        let exit = match ev.last().and_then(|e| e.1) {
            Some(x) => x,
            None => continue,
        };
        let first = *path.links.first().unwrap();
        let last = *path.links.last().unwrap();
        let origin = point_on_link(&network, first, rng.random_range(0.2..0.5), config.endpoint_noise_m, &mut rng);
        let destination = point_on_link(&network, last, rng.random_range(0.5..0.8), config.endpoint_noise_m, &mut rng);
        if let Some(rec) = TrajectoryRecord::new(
            format!("t{}", t.trip.trip_id),
            "d1".to_string(),
            path.links.clone(),
            ev.iter().map(|e| e.0).collect(),
            exit,
            origin,
            destination,
            &network,
        ) {
            observed.push(rec);
        }
    }

    Ok(Scenario {
        config: config.clone(),
        network,
        schedule,
        routes,
        trips,
        truth,
        observed,
        planted_totals,
    })
}
