use std::collections::BTreeMap;

use mesocal::mesosim::{
    apply_warmup_cooldown, run_simulation, run_simulation_traced, throughput, ParamBox, RouteTable, SimParams, SimTrip, HORIZON_S,
};
use mesocal::netmodel::{grid_network, Link, LinkIdx, Network, Node, NodeIdx, OdPair, Path, PathId, TodSchedule};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single_link(length: f64, speed: f64, cap_vph: f64) -> (Network, RouteTable) {
    let nodes = vec![
        Node {
            id: "a".into(),
            x: 0.0,
            y: 0.0,
            is_junction: false,
        },
        Node {
            id: "b".into(),
            x: length,
            y: 0.0,
            is_junction: false,
        },
    ];
    let links = vec![Link {
        id: "ab".into(),
        from: NodeIdx(0),
        to: NodeIdx(1),
        length,
        speed_limit: speed,
        lanes: 1,
        capacity_vph: cap_vph,
    }];
    let net = Network::new(nodes, links).unwrap();
    let routes = RouteTable::new(
        &net,
        vec![Path {
            id: PathId(0),
            od: OdPair::new(0, 1),
            links: vec![LinkIdx(0)],
        }],
    )
    .unwrap();
    (net, routes)
}

fn deterministic() -> SimParams {
    SimParams {
        junction_delay: 0.0,
        speed_factor_std: 0.0,
        departure_jitter: 0.0,
        ..Default::default()
    }
}

/// Exit times of a single-server FIFO queue with free-flow delay `tau` and
/// service spacing `h`, written in closed max-plus form:
/// `exit_k = max_{j ≤ k} (a_j + tau + (k − j) h)`.
fn max_plus_exits(arrivals: &[f64], tau: f64, h: f64) -> Vec<f64> {
    (0..arrivals.len())
        .map(|k| {
            (0..=k)
                .map(|j| arrivals[j] + tau + (k - j) as f64 * h)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

#[test]
fn overloaded_link_matches_fluid_queue() {
    // 500 vehicles over one hour into a 360 veh/h link.
    let (net, routes) = single_link(100.0, 10.0, 360.0);
    let start = 8.0 * 3600.0;
    let arrivals: Vec<f64> = (0..500).map(|i| start + i as f64 * 3600.0 / 500.0).collect();
    let trips: Vec<SimTrip> = arrivals
        .iter()
        .enumerate()
        .map(|(i, &a)| SimTrip {
            trip_id: i as u64,
            path: PathId(0),
            departure: a,
        })
        .collect();
    let r = run_simulation(&net, &routes, &trips, &deterministic(), &TodSchedule::default(), 7).unwrap();
    let oracle = max_plus_exits(&arrivals, 10.0, 10.0);
    let end = start + 3600.0;
    let sim_done = r
        .trips
        .iter()
        .filter(|t| t.travel_time.is_some_and(|s| t.departure + s <= end))
        .count();
    let oracle_done = oracle.iter().filter(|&&e| e <= end).count();
    assert_eq!(sim_done, oracle_done);
    assert!(sim_done <= 360);
    for (t, e) in r.trips.iter().zip(&oracle) {
        assert_eq!(t.departure + t.travel_time.unwrap(), *e);
    }
    // Queue grows at arrival rate minus service rate: 500 − 360 = 140 per hour.
    let queue_at = |t: f64| arrivals.iter().filter(|&&a| a <= t).count() as i64 - oracle.iter().filter(|&&e| e <= t).count() as i64;
    let (q_half, q_full) = (queue_at(start + 1800.0), queue_at(end));
    assert!((q_half - 70).abs() <= 2, "half-hour queue {q_half}");
    assert!((q_full - 140).abs() <= 2, "one-hour queue {q_full}");
}

#[test]
fn horizon_truncation_matches_fluid_queue() {
    // Late demand on a slow link: the queue cannot drain before the horizon.
    let (net, routes) = single_link(100.0, 10.0, 360.0);
    let arrivals: Vec<f64> = (0..1500).map(|i| 22.0 * 3600.0 + i as f64).collect();
    let trips: Vec<SimTrip> = arrivals
        .iter()
        .enumerate()
        .map(|(i, &a)| SimTrip {
            trip_id: i as u64,
            path: PathId(0),
            departure: a,
        })
        .collect();
    let r = run_simulation(&net, &routes, &trips, &deterministic(), &TodSchedule::default(), 7).unwrap();
    let oracle = max_plus_exits(&arrivals, 10.0, 10.0);
    let expected = oracle.iter().filter(|&&e| e < HORIZON_S).count();
    assert_eq!(r.completed(), expected);
    assert!(expected < 1500);
    assert_eq!(r.links[0].on_link_at_end as usize, 1500 - expected);
    assert!((throughput(&r) - expected as f64 / 1500.0).abs() < 1e-15);
}

struct Scenario {
    net: Network,
    routes: RouteTable,
    trips: Vec<SimTrip>,
    params: SimParams,
}

fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=5);
    let cap = rng.random_range(40.0..900.0);
    let net = grid_network(n, rng.random_range(100.0..300.0), rng.random_range(8.0..16.0), 1, Some(cap));
    let mut paths = Vec::new();
    while paths.len() < 6 {
        let a = rng.random_range(0..net.num_nodes());
        let b = rng.random_range(0..net.num_nodes());
        if a == b {
            continue;
        }
        if let Some(links) = net.bfs_path(NodeIdx(a), NodeIdx(b)) {
            paths.push(Path {
                id: PathId(paths.len() as u32),
                od: OdPair::new(a as u32, b as u32),
                links,
            });
        }
    }
    let routes = RouteTable::new(&net, paths).unwrap();
    let late = rng.random_bool(0.3);
    let mut trips: Vec<SimTrip> = (0..rng.random_range(50..400))
        .map(|i| SimTrip {
            trip_id: i,
            path: PathId(rng.random_range(0..6)),
            departure: if late {
                rng.random_range(80_000.0..86_400.0)
            } else {
                rng.random_range(0.0..86_400.0)
            },
        })
        .collect();
    trips.sort_by(|a, b| a.departure.total_cmp(&b.departure));
    let b = ParamBox::default();
    let v = std::array::from_fn(|i| rng.random_range(b.lower[i]..=b.upper[i]));
    let params = SimParams::default().with_vector(&v);
    Scenario {
        net,
        routes,
        trips,
        params,
    }
}

#[test]
fn link_conservation_on_random_scenarios() {
    for seed in 0..50 {
        let s = random_scenario(seed);
        let (r, trace) = run_simulation_traced(&s.net, &s.routes, &s.trips, &s.params, &TodSchedule::default(), seed).unwrap();
        let mut entries: BTreeMap<usize, u64> = BTreeMap::new();
        let mut still_on: BTreeMap<usize, u64> = BTreeMap::new();
        for e in &trace {
            *entries.entry(e.link.0).or_default() += 1;
            if e.exit.is_none() {
                *still_on.entry(e.link.0).or_default() += 1;
            }
        }
        for (l, st) in r.links.iter().enumerate() {
            assert_eq!(st.entries, st.exits + st.on_link_at_end, "seed {seed} link {l}");
            assert_eq!(st.entries, entries.get(&l).copied().unwrap_or(0));
            assert_eq!(st.on_link_at_end, still_on.get(&l).copied().unwrap_or(0));
            assert_eq!(st.entries, st.per_tod.iter().map(|t| t.entries).sum::<u64>());
        }
    }
}

#[test]
fn fifo_on_every_link() {
    for seed in 100..130 {
        let s = random_scenario(seed);
        let (_, trace) = run_simulation_traced(&s.net, &s.routes, &s.trips, &s.params, &TodSchedule::default(), seed).unwrap();
        let mut last: BTreeMap<usize, (f64, Option<f64>)> = BTreeMap::new();
        for e in &trace {
            if let Some(&(entry, exit)) = last.get(&e.link.0) {
                assert!(e.entry >= entry);
                match (exit, e.exit) {
                    (Some(a), Some(b)) => assert!(b > a, "seed {seed}: exit order broken on link {}", e.link.0),
                    (None, Some(_)) => panic!("vehicle overtook a stuck one"),
                    _ => {}
                }
            }
            last.insert(e.link.0, (e.entry, e.exit));
        }
    }
}

#[test]
fn travel_times_respect_free_flow() {
    for seed in 200..220 {
        let s = random_scenario(seed);
        let r = run_simulation(&s.net, &s.routes, &s.trips, &s.params, &TodSchedule::default(), seed).unwrap();
        for t in &r.trips {
            let Some(tt) = t.travel_time else { continue };
            let path = s.routes.get(t.path).unwrap();
            let ff: f64 = path
                .links
                .iter()
                .map(|l| {
                    let link = s.net.link(*l);
                    link.length / (link.speed_limit * t.speed_factor)
                })
                .sum();
            assert!(tt >= ff - 1e-9 * ff.max(1.0), "seed {seed}: {tt} < {ff}");
        }
        let lf = r.loaded_fraction();
        assert!((0.0..=1.0).contains(&lf));
    }
}

#[test]
fn reruns_are_bit_identical() {
    let s = random_scenario(3);
    let a = run_simulation(&s.net, &s.routes, &s.trips, &s.params, &TodSchedule::default(), 42).unwrap();
    let b = run_simulation(&s.net, &s.routes, &s.trips, &s.params, &TodSchedule::default(), 42).unwrap();
    assert_eq!(a, b);
    let c = run_simulation(&s.net, &s.routes, &s.trips, &s.params, &TodSchedule::default(), 43).unwrap();
    assert_ne!(a.trips, c.trips);
}

#[test]
fn main_interval_filter_keeps_seven_to_ten_pm() {
    let (net, routes) = single_link(100.0, 10.0, 1800.0);
    let trips: Vec<SimTrip> = (0..24)
        .map(|h| SimTrip {
            trip_id: h,
            path: PathId(0),
            departure: h as f64 * 3600.0 + 30.0,
        })
        .collect();
    let r = run_simulation(&net, &routes, &trips, &deterministic(), &TodSchedule::default(), 1).unwrap();
    let kept: Vec<u64> = apply_warmup_cooldown(&r, &TodSchedule::default())
        .trips
        .iter()
        .map(|t| t.trip_id)
        .collect();
    assert_eq!(kept, (7..22).collect::<Vec<u64>>());
}

/// Corridor with junctions at every interior node, one shared path.
fn corridor(n: usize, cap: f64) -> (Network, RouteTable) {
    let net = {
        let nodes = (0..=n)
            .map(|i| Node {
                id: format!("n{i}"),
                x: i as f64 * 150.0,
                y: 0.0,
                is_junction: i > 0 && i < n,
            })
            .collect();
        let links = (0..n)
            .map(|i| Link {
                id: format!("l{i}"),
                from: NodeIdx(i),
                to: NodeIdx(i + 1),
                length: 150.0,
                speed_limit: 12.0,
                lanes: 1,
                capacity_vph: cap,
            })
            .collect();
        Network::new(nodes, links).unwrap()
    };
    let routes = RouteTable::new(
        &net,
        vec![Path {
            id: PathId(0),
            od: OdPair::new(0, 1),
            links: (0..n).map(LinkIdx).collect(),
        }],
    )
    .unwrap();
    (net, routes)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn more_capacity_never_loads_fewer_trips(seed in any::<u64>(), lo in 0.5f64..1.0, extra in 0.0f64..1.0) {
        let (net, routes) = corridor(4, 120.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trips: Vec<SimTrip> = (0..600)
            .map(|i| SimTrip { trip_id: i, path: PathId(0), departure: rng.random_range(75_000.0..86_000.0) })
            .collect();
        let p = SimParams { capacity_scale: lo, ..Default::default() };
        let q = SimParams { capacity_scale: lo + extra, ..p };
        let a = run_simulation(&net, &routes, &trips, &p, &TodSchedule::default(), seed).unwrap();
        let b = run_simulation(&net, &routes, &trips, &q, &TodSchedule::default(), seed).unwrap();
        prop_assert!(b.loaded_fraction() >= a.loaded_fraction());
    }

    #[test]
    fn more_junction_delay_never_speeds_up_a_trip(seed in any::<u64>(), jd in 0.0f64..5.0, extra in 0.0f64..5.0) {
        let (net, routes) = corridor(5, 900.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trips: Vec<SimTrip> = (0..300)
            .map(|i| SimTrip { trip_id: i, path: PathId(0), departure: rng.random_range(28_000.0..30_000.0) })
            .collect();
        trips.sort_by(|a, b| a.departure.total_cmp(&b.departure));
        let p = SimParams { junction_delay: jd, speed_factor_std: 0.0, ..Default::default() };
        let q = SimParams { junction_delay: jd + extra, ..p };
        let a = run_simulation(&net, &routes, &trips, &p, &TodSchedule::default(), seed).unwrap();
        let b = run_simulation(&net, &routes, &trips, &q, &TodSchedule::default(), seed).unwrap();
        for (x, y) in a.trips.iter().zip(&b.trips) {
            if let (Some(s0), Some(s1)) = (x.travel_time, y.travel_time) {
                prop_assert!(s1 >= s0 - 1e-9, "{} < {}", s1, s0);
            }
        }
    }
}
