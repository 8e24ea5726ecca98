use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::SimParams;
use super::SimError;
use crate::netmodel::{LinkIdx, Network, OdPair, Path, PathId, TodSchedule};

/// Seconds in the simulated day.
pub const DAY_S: f64 = 86_400.0;
/// Extra drain time after the day so late departures can finish.
pub const DRAIN_S: f64 = 7_200.0;
pub const HORIZON_S: f64 = DAY_S + DRAIN_S;
/// Lower floor on a vehicle's speed factor.
pub const MIN_SPEED_FACTOR: f64 = 0.1;

/// A trip to load: one vehicle following a fixed path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrip {
    pub trip_id: u64,
    pub path: PathId,
    /// Seconds since midnight.
    pub departure: f64,
}

/// Paths available to the simulator, indexed by id and grouped by OD pair.
#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    paths: Vec<Path>,
    index: HashMap<PathId, usize>,
    by_od: BTreeMap<OdPair, Vec<usize>>,
}

impl RouteTable {
    pub fn new(network: &Network, paths: Vec<Path>) -> Result<Self, SimError> {
        let mut index = HashMap::new();
        let mut by_od: BTreeMap<OdPair, Vec<usize>> = BTreeMap::new();
        for (i, p) in paths.iter().enumerate() {
            if !network.validate_path(&p.links) {
                return Err(SimError::InvalidPath(p.id.0));
            }
            if index.insert(p.id, i).is_some() {
                return Err(SimError::Malformed(format!("duplicate path id {}", p.id.0)));
            }
            by_od.entry(p.od).or_default().push(i);
        }
        Ok(Self { paths, index, by_od })
    }

    pub fn get(&self, id: PathId) -> Option<&Path> {
        self.index.get(&id).map(|&i| &self.paths[i])
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripStatus {
    Completed,
    /// Still travelling (or not yet loaded) when the horizon ended.
    Incomplete,
    /// Unknown path id; never loaded.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripOutcome {
    pub trip_id: u64,
    /// Path followed at the end of the run (differs from the requested one
    /// only under rerouting).
    pub path: PathId,
    /// Departure from the trip table.
    pub scheduled_departure: f64,
    /// Departure after jitter.
    pub departure: f64,
    pub speed_factor: f64,
    pub status: TripStatus,
    /// Seconds from departure to leaving the last link.
    pub travel_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TodLinkStats {
    pub entries: u64,
    pub exits: u64,
    /// Sum of traversal speeds (m/s) of the exits counted here.
    pub speed_sum: f64,
}

impl TodLinkStats {
    pub fn mean_speed(&self) -> Option<f64> {
        (self.exits > 0).then(|| self.speed_sum / self.exits as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub entries: u64,
    pub exits: u64,
    /// Vehicles that entered but had not left at the horizon.
    pub on_link_at_end: u64,
    /// Indexed by TOD interval (0-based) with one trailing drain bucket,
    /// keyed by entry time.
    pub per_tod: Vec<TodLinkStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub seed: u64,
    pub trips: Vec<TripOutcome>,
    pub links: Vec<LinkStats>,
}

impl SimResult {
    pub fn requested(&self) -> usize {
        self.trips.len()
    }

    pub fn completed(&self) -> usize {
        self.trips.iter().filter(|t| t.status == TripStatus::Completed).count()
    }

    pub fn rejected(&self) -> usize {
        self.trips.iter().filter(|t| t.status == TripStatus::Rejected).count()
    }

    /// Completed over requested trips; 1 for an empty trip set.
    pub fn loaded_fraction(&self) -> f64 {
        if self.trips.is_empty() {
            1.0
        } else {
            self.completed() as f64 / self.requested() as f64
        }
    }

    pub fn total_travel_time(&self) -> f64 {
        self.trips.iter().filter_map(|t| t.travel_time).sum()
    }
}

/// Completed over requested trips.
pub fn throughput(result: &SimResult) -> f64 {
    result.loaded_fraction()
}

/// Keeps only trips scheduled to depart in a main interval. Link statistics
/// are left untouched.
pub fn apply_warmup_cooldown(result: &SimResult, schedule: &TodSchedule) -> SimResult {
    SimResult {
        seed: result.seed,
        trips: result
            .trips
            .iter()
            .filter(|t| t.scheduled_departure < DAY_S && schedule.is_main(schedule.interval_of(t.scheduled_departure)))
            .cloned()
            .collect(),
        links: result.links.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VehicleState {
    Waiting,
    /// On a link that it leaves at `exit`.
    OnLink {
        entered: f64,
        exit: f64,
    },
    Done,
    Stranded,
}

struct Vehicle {
    route: usize,
    /// Index in the route of the next link to enter; while on a link, the
    /// current link is the one before it.
    next: usize,
    departure: f64,
    speed_factor: f64,
    state: VehicleState,
}

struct LinkState {
    length: f64,
    speed: f64,
    junction_after: bool,
    service: f64,
    last_exit: f64,
    exits_in_bucket: Vec<u32>,
    cap: Vec<u32>,
    /// Latest observed traversal time, for route choice.
    estimate: f64,
}

/// Non-negative `f64` as a totally ordered key.
fn time_key(t: f64) -> u64 {
    debug_assert!(t >= 0.0);
    (t + 0.0).to_bits()
}

struct Buckets {
    ends: Vec<f64>,
}

impl Buckets {
    fn new(schedule: &TodSchedule) -> Self {
        let mut ends: Vec<f64> = schedule.intervals().iter().map(|iv| iv.end_s()).collect();
        ends.push(HORIZON_S);
        Self { ends }
    }

    fn hours(&self, b: usize) -> f64 {
        let start = if b == 0 { 0.0 } else { self.ends[b - 1] };
        (self.ends[b] - start) / 3600.0
    }

    fn of(&self, t: f64) -> usize {
        self.ends.partition_point(|&e| e <= t)
    }

    fn len(&self) -> usize {
        self.ends.len()
    }
}

/// Exit time of the next vehicle to leave `link` given its earliest
/// possible exit, or `None` when it cannot leave before the (exclusive)
/// horizon.
fn schedule_exit(link: &mut LinkState, earliest: f64, buckets: &Buckets) -> Option<f64> {
    let mut t = earliest.max(link.last_exit + link.service);
    loop {
        if t >= HORIZON_S {
            return None;
        }
        let b = buckets.of(t);
        if link.exits_in_bucket[b] < link.cap[b] {
            link.exits_in_bucket[b] += 1;
            link.last_exit = t;
            return Some(t);
        }
        t = t.max(buckets.ends[b]);
    }
}

fn draw_speed_factor<R: Rng>(rng: &mut R, mean: f64, std: f64) -> f64 {
    // Always consume the same draws so runs with different parameters
    // share their random numbers.
    let z = loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            break z;
        }
    };
    (mean + std * z).max(MIN_SPEED_FACTOR)
}

/// One link traversal, recorded in processing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEvent {
    pub link: LinkIdx,
    pub trip_id: u64,
    pub entry: f64,
    /// `None` when the vehicle was still on the link at the horizon.
    pub exit: Option<f64>,
}

/// Runs one simulated day plus drain. Deterministic for a given seed.
pub fn run_simulation(
    network: &Network,
    routes: &RouteTable,
    trips: &[SimTrip],
    params: &SimParams,
    schedule: &TodSchedule,
    seed: u64,
) -> Result<SimResult, SimError> {
    simulate(network, routes, trips, params, schedule, seed, None)
}

/// As [`run_simulation`], also returning every link traversal.
pub fn run_simulation_traced(
    network: &Network,
    routes: &RouteTable,
    trips: &[SimTrip],
    params: &SimParams,
    schedule: &TodSchedule,
    seed: u64,
) -> Result<(SimResult, Vec<LinkEvent>), SimError> {
    let mut trace = Vec::new();
    let r = simulate(network, routes, trips, params, schedule, seed, Some(&mut trace))?;
    Ok((r, trace))
}

fn simulate(
    network: &Network,
    routes: &RouteTable,
    trips: &[SimTrip],
    params: &SimParams,
    schedule: &TodSchedule,
    seed: u64,
    mut trace: Option<&mut Vec<LinkEvent>>,
) -> Result<SimResult, SimError> {
    params.validate()?;
    let buckets = Buckets::new(schedule);
    let nb = buckets.len();
    let mut links: Vec<LinkState> = network
        .links()
        .iter()
        .map(|l| {
            let vph = params.capacity_scale * l.capacity_vph;
            LinkState {
                length: l.length,
                speed: l.speed_limit,
                junction_after: network.node(l.to).is_junction,
                service: params.min_headway.max(3600.0 / vph),
                last_exit: f64::NEG_INFINITY,
                exits_in_bucket: vec![0; nb],
                cap: (0..nb).map(|b| (vph * buckets.hours(b)).floor() as u32).collect(),
                estimate: l.free_flow_time(),
            }
        })
        .collect();
    let mut stats: Vec<LinkStats> = (0..links.len())
        .map(|_| LinkStats {
            per_tod: vec![TodLinkStats::default(); nb],
            ..Default::default()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcomes = Vec::with_capacity(trips.len());
    let mut vehicles: Vec<Vehicle> = Vec::with_capacity(trips.len());
    let mut owner: Vec<usize> = Vec::with_capacity(trips.len());
    let mut heap: BinaryHeap<Reverse<(u64, u64, usize)>> = BinaryHeap::new();
    let mut seq = 0u64;

    for (k, trip) in trips.iter().enumerate() {
        let sf = draw_speed_factor(&mut rng, params.speed_factor_mean, params.speed_factor_std);
        let u: f64 = rng.random();
        let departure = (trip.departure + (u - 0.5) * params.departure_jitter).max(0.0);
        let route = routes.index.get(&trip.path).copied();
        outcomes.push(TripOutcome {
            trip_id: trip.trip_id,
            path: trip.path,
            scheduled_departure: trip.departure,
            departure,
            speed_factor: sf,
            status: if route.is_some() {
                TripStatus::Incomplete
            } else {
                TripStatus::Rejected
            },
            travel_time: None,
        });
        if let Some(route) = route {
            let v = vehicles.len();
            vehicles.push(Vehicle {
                route,
                next: 0,
                departure,
                speed_factor: sf,
                state: VehicleState::Waiting,
            });
            owner.push(k);
            heap.push(Reverse((time_key(departure), seq, v)));
            seq += 1;
        }
    }
    let rejected = outcomes.iter().filter(|o| o.status == TripStatus::Rejected).count();
    if rejected > 0 {
        log::warn!("{rejected} trips reference unknown paths and were rejected");
    }

    const REROUTE: usize = usize::MAX;
    let mut reroute_rng = ChaCha8Rng::seed_from_u64(seed);
    reroute_rng.set_stream(1);
    if params.reroute_period > 0.0 && params.reroute_prob > 0.0 {
        heap.push(Reverse((time_key(params.reroute_period), seq, REROUTE)));
        seq += 1;
    }

    while let Some(Reverse((key, _, v))) = heap.pop() {
        let t = f64::from_bits(key);
        if t >= HORIZON_S {
            break;
        }
        if v == REROUTE {
            reroute(t, &mut vehicles, routes, &links, params.reroute_prob, &mut reroute_rng);
            let next = t + params.reroute_period;
            if next < HORIZON_S {
                heap.push(Reverse((time_key(next), seq, REROUTE)));
                seq += 1;
            }
            continue;
        }
        let veh = &mut vehicles[v];
        let path = &routes.paths[veh.route].links;
        let l = path[veh.next].0;
        let link = &mut links[l];
        let st = &mut stats[l];
        let entry_bucket = buckets.of(t).min(nb - 1);
        st.entries += 1;
        st.per_tod[entry_bucket].entries += 1;
        let earliest = t + link.length / (link.speed * veh.speed_factor);
        let exit = schedule_exit(link, earliest, &buckets);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(LinkEvent {
                link: LinkIdx(l),
                trip_id: trips[owner[v]].trip_id,
                entry: t,
                exit,
            });
        }
        match exit {
            None => {
                veh.next += 1;
                veh.state = VehicleState::OnLink {
                    entered: t,
                    exit: f64::INFINITY,
                };
            }
            Some(exit) => {
                st.exits += 1;
                let traversal = exit - t;
                if traversal > 0.0 {
                    st.per_tod[entry_bucket].speed_sum += link.length / traversal;
                }
                st.per_tod[entry_bucket].exits += 1;
                link.estimate = traversal;
                veh.next += 1;
                if veh.next == path.len() {
                    veh.state = VehicleState::Done;
                    let o = &mut outcomes[owner[v]];
                    o.status = TripStatus::Completed;
                    o.travel_time = Some(exit - veh.departure);
                } else {
                    veh.state = VehicleState::OnLink { entered: t, exit };
                    let delay = if link.junction_after { params.junction_delay } else { 0.0 };
                    heap.push(Reverse((time_key(exit + delay), seq, v)));
                    seq += 1;
                }
            }
        }
    }

    for (v, veh) in vehicles.iter_mut().enumerate() {
        match veh.state {
            VehicleState::OnLink { exit, .. } if exit >= HORIZON_S => {
                let l = routes.paths[veh.route].links[veh.next - 1].0;
                stats[l].on_link_at_end += 1;
            }
            VehicleState::Waiting | VehicleState::OnLink { .. } => {
                veh.state = VehicleState::Stranded;
            }
            VehicleState::Done | VehicleState::Stranded => {}
        }
        outcomes[owner[v]].path = routes.paths[veh.route].id;
    }

    Ok(SimResult {
        seed,
        trips: outcomes,
        links: stats,
    })
}

/// One rerouting round. An eligible vehicle is on a link that is not the
/// last of its route; it may switch to another route of its OD pair that
/// passes through the same link (not as its last link), choosing the one
/// with the lowest estimated remaining time. Ties keep the current route.
fn reroute<R: Rng>(t: f64, vehicles: &mut [Vehicle], routes: &RouteTable, links: &[LinkState], prob: f64, rng: &mut R) {
    for veh in vehicles.iter_mut() {
        let VehicleState::OnLink { entered, exit } = veh.state else {
            continue;
        };
        if !(entered <= t && t < exit) {
            continue;
        }
        let current = &routes.paths[veh.route];
        // `next` already points past the current link.
        let here = current.links[veh.next - 1];
        let draw: f64 = rng.random();
        if draw >= prob {
            continue;
        }
        let remaining = |links_after: &[LinkIdx]| -> f64 { links_after.iter().map(|l| links[l.0].estimate).sum() };
        let mut best = (remaining(&current.links[veh.next..]), veh.route, veh.next);
        for &alt in &routes.by_od[&current.od] {
            if alt == veh.route {
                continue;
            }
            let p = &routes.paths[alt].links;
            if let Some(j) = p.iter().position(|&l| l == here) {
                if j + 1 < p.len() {
                    let cost = remaining(&p[j + 1..]);
                    if cost < best.0 {
                        best = (cost, alt, j + 1);
                    }
                }
            }
        }
        veh.route = best.1;
        veh.next = best.2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Link, Node, NodeIdx};

    /// Straight corridor of `n` links, each `len` m long at `speed` m/s.
    pub(crate) fn corridor(n: usize, len: f64, speed: f64, cap_vph: f64, junctions: bool) -> (Network, RouteTable) {
        let nodes = (0..=n)
            .map(|i| Node {
                id: format!("n{i}"),
                x: i as f64 * len,
                y: 0.0,
                is_junction: junctions && i > 0 && i < n,
            })
            .collect();
        let links = (0..n)
            .map(|i| Link {
                id: format!("l{i}"),
                from: NodeIdx(i),
                to: NodeIdx(i + 1),
                length: len,
                speed_limit: speed,
                lanes: 1,
                capacity_vph: cap_vph,
            })
            .collect();
        let net = Network::new(nodes, links).unwrap();
        let path = Path {
            id: PathId(0),
            od: OdPair::new(0, 1),
            links: (0..n).map(LinkIdx).collect(),
        };
        let routes = RouteTable::new(&net, vec![path]).unwrap();
        (net, routes)
    }

    fn exact() -> SimParams {
        SimParams {
            junction_delay: 0.0,
            speed_factor_std: 0.0,
            departure_jitter: 0.0,
            ..Default::default()
        }
    }

    fn trip(id: u64, dep: f64) -> SimTrip {
        SimTrip {
            trip_id: id,
            path: PathId(0),
            departure: dep,
        }
    }

    #[test]
    fn free_flow_identity() {
        let (net, routes) = corridor(2, 200.0, 10.0, 1800.0, true);
        let r = run_simulation(&net, &routes, &[trip(1, 8.0 * 3600.0)], &exact(), &TodSchedule::default(), 1).unwrap();
        assert_eq!(r.trips[0].travel_time, Some(40.0));
    }

    #[test]
    fn headway_separates_simultaneous_entries() {
        let (net, routes) = corridor(1, 100.0, 10.0, 1800.0, false);
        let trips = [trip(1, 100.0), trip(2, 100.0)];
        let r = run_simulation(&net, &routes, &trips, &exact(), &TodSchedule::default(), 1).unwrap();
        let (a, b) = (r.trips[0].travel_time.unwrap(), r.trips[1].travel_time.unwrap());
        assert_eq!(b - a, 2.0);
    }

    #[test]
    fn junction_delay_is_added_between_links() {
        let (net, routes) = corridor(3, 100.0, 10.0, 1800.0, true);
        let p = SimParams {
            junction_delay: 5.0,
            ..exact()
        };
        let r = run_simulation(&net, &routes, &[trip(1, 0.0)], &p, &TodSchedule::default(), 1).unwrap();
        assert_eq!(r.trips[0].travel_time, Some(30.0 + 2.0 * 5.0));
    }

    #[test]
    fn unknown_paths_are_rejected() {
        let (net, routes) = corridor(1, 100.0, 10.0, 1800.0, false);
        let bad = SimTrip {
            trip_id: 9,
            path: PathId(77),
            departure: 0.0,
        };
        let r = run_simulation(&net, &routes, &[trip(1, 0.0), bad], &exact(), &TodSchedule::default(), 1).unwrap();
        assert_eq!(r.rejected(), 1);
        assert_eq!(r.completed(), 1);
        assert_eq!(throughput(&r), 0.5);
    }

    #[test]
    fn warmup_and_cooldown_boundaries() {
        let (net, routes) = corridor(1, 100.0, 10.0, 1800.0, false);
        let trips = [
            trip(1, 7.0 * 3600.0 - 60.0),
            trip(2, 7.0 * 3600.0),
            trip(3, 22.0 * 3600.0 - 1.0),
            trip(4, 22.0 * 3600.0),
        ];
        let r = run_simulation(&net, &routes, &trips, &exact(), &TodSchedule::default(), 1).unwrap();
        let kept: Vec<u64> = apply_warmup_cooldown(&r, &TodSchedule::default())
            .trips
            .iter()
            .map(|t| t.trip_id)
            .collect();
        assert_eq!(kept, vec![2, 3]);
        let early = run_simulation(&net, &routes, &[trip(1, 10.0)], &exact(), &TodSchedule::default(), 1).unwrap();
        assert!(apply_warmup_cooldown(&early, &TodSchedule::default()).trips.is_empty());
    }

    #[test]
    fn capacity_limits_exits_per_interval() {
        // 30 vph: 60 exits fit in the 2 h night interval and 60 in the drain.
        let (net, routes) = corridor(1, 10.0, 10.0, 30.0, false);
        let p = SimParams {
            min_headway: 1.0,
            ..exact()
        };
        let trips: Vec<SimTrip> = (0..150).map(|i| trip(i, 22.0 * 3600.0 + i as f64)).collect();
        let r = run_simulation(&net, &routes, &trips, &p, &TodSchedule::default(), 1).unwrap();
        let before_midnight = r
            .trips
            .iter()
            .filter(|t| t.travel_time.is_some_and(|s| t.departure + s < DAY_S))
            .count();
        assert_eq!(before_midnight, 60);
        assert_eq!(r.completed(), 120);
        let l = &r.links[0];
        assert_eq!(l.entries, l.exits + l.on_link_at_end);
        assert_eq!(l.on_link_at_end, 30);
    }

    #[test]
    fn rerouting_switches_to_faster_branch() {
        // Two routes share the first link and split afterwards; one branch
        // is congested by earlier traffic.
        let nodes: Vec<Node> = ["a", "b", "c", "d", "e"]
            .iter()
            .enumerate()
            .map(|(i, id)| Node {
                id: id.to_string(),
                x: i as f64,
                y: 0.0,
                is_junction: false,
            })
            .collect();
        let mk = |id: &str, f: usize, t: usize, len: f64, cap: f64| Link {
            id: id.into(),
            from: NodeIdx(f),
            to: NodeIdx(t),
            length: len,
            speed_limit: 10.0,
            lanes: 1,
            capacity_vph: cap,
        };
        let links = vec![
            mk("s", 0, 1, 1000.0, 3600.0),
            mk("slow", 1, 2, 100.0, 60.0),
            mk("x", 2, 4, 100.0, 3600.0),
            mk("fast", 1, 3, 150.0, 3600.0),
            mk("y", 3, 4, 100.0, 3600.0),
        ];
        let net = Network::new(nodes, links).unwrap();
        let od = OdPair::new(0, 1);
        let paths = vec![
            Path {
                id: PathId(0),
                od,
                links: vec![LinkIdx(0), LinkIdx(1), LinkIdx(2)],
            },
            Path {
                id: PathId(1),
                od,
                links: vec![LinkIdx(0), LinkIdx(3), LinkIdx(4)],
            },
        ];
        let routes = RouteTable::new(&net, paths).unwrap();
        let trips: Vec<SimTrip> = (0..20).map(|i| trip(i, i as f64 * 2.0)).collect();
        let mut p = SimParams {
            reroute_period: 30.0,
            reroute_prob: 1.0,
            min_headway: 1.0,
            ..exact()
        };
        let with = run_simulation(&net, &routes, &trips, &p, &TodSchedule::default(), 3).unwrap();
        p.reroute_period = 0.0;
        let without = run_simulation(&net, &routes, &trips, &p, &TodSchedule::default(), 3).unwrap();
        assert!(without.trips.iter().all(|t| t.path == PathId(0)));
        assert!(with.trips.iter().any(|t| t.path == PathId(1)));
        assert!(with.total_travel_time() < without.total_travel_time());
    }
}
