use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CalibError;
use crate::mesosim::{SimResult, TripStatus};
use crate::netmodel::{PathId, TodSchedule};

/// An observed trip relabelled to its representative path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedTrip {
    pub trip_id: String,
    pub path: PathId,
    /// Seconds since midnight.
    pub departure: f64,
    pub travel_time: f64,
    pub tod: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub observed: usize,
    pub matched: usize,
    pub unmatched: usize,
    /// Mean squared travel-time error over matched pairs, in s².
    pub mse: f64,
}

/// A matched observed/simulated pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub observed: usize,
    pub tod: u8,
    pub observed_time: f64,
    pub simulated_time: f64,
}

type Pool = HashMap<(PathId, u8), Vec<(f64, f64)>>;

/// Completed simulated trips keyed by (path, interval of scheduled
/// departure), each sorted by departure.
fn completed_pool(sim: &SimResult, schedule: &TodSchedule) -> Pool {
    let mut pool: Pool = HashMap::new();
    for t in &sim.trips {
        if let (TripStatus::Completed, Some(tt)) = (t.status, t.travel_time) {
            let tod = schedule.interval_of(t.scheduled_departure);
            pool.entry((t.path, tod)).or_default().push((t.scheduled_departure, tt));
        }
    }
    for v in pool.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    }
    pool
}

fn nearest(sorted: &[(f64, f64)], t: f64) -> Option<(f64, f64)> {
    let i = sorted.partition_point(|e| e.0 < t);
    let after = sorted.get(i).copied();
    let before = i.checked_sub(1).map(|j| sorted[j]);
    match (before, after) {
        (Some(b), Some(a)) => Some(if t - b.0 <= a.0 - t { b } else { a }),
        (b, a) => b.or(a),
    }
}

/// Pairs every observed trip with the completed simulated trip on the same
/// path, departing in the same interval, whose departure is nearest. One
/// simulated trip may serve several observations.
pub fn match_trips(sim: &SimResult, observed: &[ObservedTrip], schedule: &TodSchedule) -> Vec<Option<MatchedPair>> {
    let pool = completed_pool(sim, schedule);
    observed
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let cands = pool.get(&(o.path, o.tod))?;
            let (_, tt) = nearest(cands, o.departure)?;
            Some(MatchedPair {
                observed: k,
                tod: o.tod,
                observed_time: o.travel_time,
                simulated_time: tt,
            })
        })
        .collect()
}

/// Mean squared travel-time error over matched trips. Fails when nothing
/// matches.
pub fn trip_loss(sim: &SimResult, observed: &[ObservedTrip], schedule: &TodSchedule) -> Result<MatchReport, CalibError> {
    let pairs = match_trips(sim, observed, schedule);
    let matched: Vec<&MatchedPair> = pairs.iter().flatten().collect();
    let report = MatchReport {
        observed: observed.len(),
        matched: matched.len(),
        unmatched: observed.len() - matched.len(),
        mse: if matched.is_empty() {
            f64::NAN
        } else {
            matched.iter().map(|p| (p.simulated_time - p.observed_time).powi(2)).sum::<f64>() / matched.len() as f64
        },
    };
    if report.matched == 0 {
        return Err(CalibError::NoMatches(report));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesosim::TripOutcome;

    fn outcome(id: u64, path: u32, dep: f64, tt: Option<f64>) -> TripOutcome {
        TripOutcome {
            trip_id: id,
            path: PathId(path),
            scheduled_departure: dep,
            departure: dep,
            speed_factor: 1.0,
            status: if tt.is_some() {
                TripStatus::Completed
            } else {
                TripStatus::Incomplete
            },
            travel_time: tt,
        }
    }

    fn obs(path: u32, dep: f64, tt: f64) -> ObservedTrip {
        let schedule = TodSchedule::default();
        ObservedTrip {
            trip_id: format!("o{path}-{dep}"),
            path: PathId(path),
            departure: dep,
            travel_time: tt,
            tod: schedule.interval_of(dep),
        }
    }

    fn sim(trips: Vec<TripOutcome>) -> SimResult {
        SimResult {
            seed: 0,
            trips,
            links: Vec::new(),
        }
    }

    #[test]
    fn identical_times_give_zero() {
        let s = sim(vec![outcome(0, 1, 30_000.0, Some(300.0)), outcome(1, 2, 40_000.0, Some(500.0))]);
        let o = vec![obs(1, 30_000.0, 300.0), obs(2, 40_000.0, 500.0)];
        let r = trip_loss(&s, &o, &TodSchedule::default()).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.matched, 2);
    }

    #[test]
    fn symmetric_errors() {
        let s = sim(vec![outcome(0, 1, 30_000.0, Some(310.0)), outcome(1, 2, 40_000.0, Some(490.0))]);
        let o = vec![obs(1, 30_000.0, 300.0), obs(2, 40_000.0, 500.0)];
        let r = trip_loss(&s, &o, &TodSchedule::default()).unwrap();
        assert!((r.mse - 100.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_departure_within_interval() {
        // 36_000 s is the start of the midday interval, so the 35_990 s trip
        // is ineligible even though it is closer.
        let s = sim(vec![
            outcome(0, 1, 35_990.0, Some(100.0)),
            outcome(1, 1, 36_500.0, Some(200.0)),
            outcome(2, 1, 39_000.0, Some(900.0)),
        ]);
        let pairs = match_trips(&s, &[obs(1, 36_010.0, 0.0)], &TodSchedule::default());
        assert_eq!(pairs[0].unwrap().simulated_time, 200.0);
    }

    #[test]
    fn unmatched_are_counted_and_empty_fails() {
        let s = sim(vec![outcome(0, 1, 30_000.0, Some(300.0)), outcome(1, 3, 30_000.0, None)]);
        let o = vec![obs(1, 30_000.0, 300.0), obs(3, 30_000.0, 10.0), obs(4, 30_000.0, 10.0)];
        let r = trip_loss(&s, &o, &TodSchedule::default()).unwrap();
        assert_eq!((r.matched, r.unmatched), (1, 2));
        match trip_loss(&s, &o[1..], &TodSchedule::default()) {
            Err(CalibError::NoMatches(rep)) => assert_eq!(rep.unmatched, 2),
            other => panic!("{other:?}"),
        }
    }
}
