//! Trajectory ingestion: loading, abnormal-trip filtering, speed-limit
//! re-estimation, TOD labelling and penetration-rate inversion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::netmodel::{LinkIdx, Network, TodSchedule};

pub const METERS_PER_MILE: f64 = 1609.344;
pub const MIN_SPEED_MPH: f64 = 5.0;
pub const MAX_SPEED_MPH: f64 = 100.0;
pub const DEFAULT_SPEED_PERCENTILE: f64 = 0.80;
pub const DEFAULT_MIN_OBS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trip {trip}: unknown link id {link}")]
    UnknownLink { trip: String, link: String },
    #[error("penetration rate must lie in (0, 1], got {0}")]
    InvalidPenetration(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One map-matched trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub trip_id: String,
    pub day: String,
    pub links: Vec<LinkIdx>,
    /// Entry time into each link, seconds since midnight.
    pub entry_times: Vec<f64>,
    /// Exit time from the final link.
    pub exit_time: f64,
    pub origin: (f64, f64),
    pub destination: (f64, f64),
    pub travel_time: f64,
    pub distance: f64,
    pub tod: Option<u8>,
}

impl TrajectoryRecord {
    /// Builds a record, deriving travel time and distance. Returns `None`
    /// when timestamps are not strictly increasing or the trip has no links.
    pub fn new(
        trip_id: String,
        day: String,
        links: Vec<LinkIdx>,
        entry_times: Vec<f64>,
        exit_time: f64,
        origin: (f64, f64),
        destination: (f64, f64),
        network: &Network,
    ) -> Option<Self> {
        if links.is_empty() || links.len() != entry_times.len() {
            return None;
        }
        let monotone = entry_times.windows(2).all(|w| w[1] > w[0]) && exit_time > *entry_times.last().unwrap();
        if !monotone {
            return None;
        }
        Some(Self {
            trip_id,
            day,
            travel_time: exit_time - entry_times[0],
            distance: network.path_length(&links),
            links,
            entry_times,
            exit_time,
            origin,
            destination,
            tod: None,
        })
    }

    pub fn departure(&self) -> f64 {
        self.entry_times[0]
    }

    /// Average speed in miles per hour.
    pub fn avg_speed_mph(&self) -> f64 {
        (self.distance / METERS_PER_MILE) / (self.travel_time / 3600.0)
    }

    /// `(link, speed m/s)` for every traversal of the trip.
    pub fn traversal_speeds<'a>(&'a self, network: &'a Network) -> impl Iterator<Item = (LinkIdx, f64)> + 'a {
        self.links.iter().enumerate().map(move |(k, &l)| {
            let leave = self.entry_times.get(k + 1).copied().unwrap_or(self.exit_time);
            (l, network.link(l).length / (leave - self.entry_times[k]))
        })
    }
}

/// Result of parsing a trajectory file.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryLoad {
    pub records: Vec<TrajectoryRecord>,
    /// Trip ids dropped because of non-monotone timestamps.
    pub rejected: Vec<String>,
}

struct RawRow {
    link: LinkIdx,
    entry: f64,
    exit: Option<f64>,
    origin: (f64, f64),
    dest: (f64, f64),
}

/// Reads a trajectory CSV:
/// `trip_id,day,link_id,entry_time_s,origin_x,origin_y,dest_x,dest_y[,exit_time_s]`.
///
/// Rows of one trip are consecutive links in traversal order. Origin is
/// taken from the first row and destination from the last. When the
/// optional `exit_time_s` column is missing the final link's exit is placed
/// one free-flow traversal after its entry.
pub fn load_trajectories<R: Read>(reader: R, network: &Network) -> Result<TrajectoryLoad, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let required = [
        "trip_id",
        "day",
        "link_id",
        "entry_time_s",
        "origin_x",
        "origin_y",
        "dest_x",
        "dest_y",
    ];
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = col(name).ok_or_else(|| IngestError::Malformed {
            line: 1,
            msg: format!("missing column {name}"),
        })?;
    }
    let exit_col = col("exit_time_s");

    let mut order: Vec<(String, String)> = Vec::new();
    let mut trips: HashMap<(String, String), Vec<RawRow>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, IngestError> {
            field(i).parse::<f64>().map_err(|_| IngestError::Malformed {
                line,
                msg: format!("bad number '{}'", field(i)),
            })
        };
        let trip = field(idx[0]).to_string();
        let day = field(idx[1]).to_string();
        let link_id = field(idx[2]);
        let link = network.link_by_id(link_id).ok_or_else(|| IngestError::UnknownLink {
            trip: trip.clone(),
            link: link_id.to_string(),
        })?;
        let exit = match exit_col.map(field) {
            Some(s) if !s.is_empty() => Some(num(exit_col.unwrap())?),
            _ => None,
        };
        let row = RawRow {
            link,
            entry: num(idx[3])?,
            exit,
            origin: (num(idx[4])?, num(idx[5])?),
            dest: (num(idx[6])?, num(idx[7])?),
        };
        let key = (day, trip);
        trips
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(row);
    }

    let mut out = TrajectoryLoad::default();
    for key in order {
        let rows = trips.remove(&key).unwrap();
        let last = rows.last().unwrap();
        let exit = last.exit.unwrap_or_else(|| last.entry + network.link(last.link).free_flow_time());
        let (day, trip) = key;
        match TrajectoryRecord::new(
            trip.clone(),
            day,
            rows.iter().map(|r| r.link).collect(),
            rows.iter().map(|r| r.entry).collect(),
            exit,
            rows[0].origin,
            last.dest,
            network,
        ) {
            Some(r) => out.records.push(r),
            None => out.rejected.push(trip),
        }
    }
    if !out.rejected.is_empty() {
        log::warn!("rejected {} trips with non-monotone timestamps", out.rejected.len());
    }
    Ok(out)
}

/// Writes records in the format read by [`load_trajectories`], including
/// the `exit_time_s` column on every row (the exit of that row's link).
pub fn write_trajectories<W: Write>(records: &[TrajectoryRecord], network: &Network, out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "trip_id",
        "day",
        "link_id",
        "entry_time_s",
        "origin_x",
        "origin_y",
        "dest_x",
        "dest_y",
        "exit_time_s",
    ])?;
    for r in records {
        for (k, &l) in r.links.iter().enumerate() {
            let exit = r.entry_times.get(k + 1).copied().unwrap_or(r.exit_time);
            w.write_record([
                r.trip_id.clone(),
                r.day.clone(),
                network.link(l).id.clone(),
                r.entry_times[k].to_string(),
                r.origin.0.to_string(),
                r.origin.1.to_string(),
                r.destination.0.to_string(),
                r.destination.1.to_string(),
                exit.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterReason {
    TooSlow,
    TooFast,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TooSlow => "below_5_mph",
            Self::TooFast => "above_100_mph",
        }
    }
}

/// Splits records into those with an average speed in `[5, 100]` mph
/// (inclusive) and the removed remainder.
pub fn filter_abnormal(records: Vec<TrajectoryRecord>) -> (Vec<TrajectoryRecord>, Vec<(TrajectoryRecord, FilterReason)>) {
    let mut kept = Vec::with_capacity(records.len());
    let mut removed = Vec::new();
    for r in records {
        let v = r.avg_speed_mph();
        if v < MIN_SPEED_MPH {
            removed.push((r, FilterReason::TooSlow));
        } else if v > MAX_SPEED_MPH {
            removed.push((r, FilterReason::TooFast));
        } else {
            kept.push(r);
        }
    }
    (kept, removed)
}

pub fn write_filter_report<W: Write>(removed: &[(TrajectoryRecord, FilterReason)], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trip_id", "day", "reason", "avg_speed_mph"])?;
    for (r, why) in removed {
        w.write_record([
            r.trip_id.clone(),
            r.day.clone(),
            why.as_str().to_string(),
            format!("{:.3}", r.avg_speed_mph()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Percentile of an ascending sample by linear interpolation between order
/// statistics (position `p·(n−1)`).
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Replaces each link's speed limit by the `percentile` of its observed
/// per-traversal speeds, for links with at least `min_obs` observations.
pub fn estimate_speed_limits(records: &[TrajectoryRecord], network: &Network, percentile: f64, min_obs: usize) -> Network {
    assert!(percentile > 0.0 && percentile < 1.0, "percentile must lie in (0, 1)");
    let mut obs: Vec<Vec<f64>> = vec![Vec::new(); network.num_links()];
    for r in records {
        for (l, v) in r.traversal_speeds(network) {
            if v.is_finite() && v > 0.0 {
                obs[l.0].push(v);
            }
        }
    }
    let speeds: Vec<f64> = network
        .links()
        .iter()
        .zip(obs.iter_mut())
        .map(|(link, o)| {
            if o.len() < min_obs.max(1) {
                link.speed_limit
            } else {
                o.sort_by(f64::total_cmp);
                percentile_sorted(o, percentile)
            }
        })
        .collect();
    network.with_speed_limits(&speeds)
}

/// TOD interval of the trip's departure.
pub fn assign_tod(record: &TrajectoryRecord, schedule: &TodSchedule) -> u8 {
    schedule.interval_of(record.departure())
}

pub fn label_tods(records: &mut [TrajectoryRecord], schedule: &TodSchedule) {
    for r in records {
        r.tod = Some(assign_tod(r, schedule));
    }
}

/// Fraction of real trips present in the trajectory sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenetrationEstimate {
    rate: f64,
    per_tod: BTreeMap<u8, f64>,
}

impl PenetrationEstimate {
    pub fn new(rate: f64) -> Result<Self, IngestError> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(IngestError::InvalidPenetration(rate));
        }
        Ok(Self {
            rate,
            per_tod: BTreeMap::new(),
        })
    }

    pub fn with_tod_rate(mut self, tod: u8, rate: f64) -> Result<Self, IngestError> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(IngestError::InvalidPenetration(rate));
        }
        self.per_tod.insert(tod, rate);
        Ok(self)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn rate_for(&self, tod: u8) -> f64 {
        self.per_tod.get(&tod).copied().unwrap_or(self.rate)
    }
}

/// Full-scale trip count implied by `observed` sampled trips.
pub fn estimate_total_trips(observed: f64, penetration: &PenetrationEstimate) -> f64 {
    observed / penetration.rate()
}

/// Full-scale trips per TOD interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalTripsPrior {
    pub per_tod: BTreeMap<u8, f64>,
}

impl TotalTripsPrior {
    /// Splits TOD-labelled records by interval, averages over the distinct
    /// days present and scales by the penetration rate of each interval.
    pub fn from_records(records: &[TrajectoryRecord], schedule: &TodSchedule, penetration: &PenetrationEstimate) -> Self {
        let days: BTreeSet<&str> = records.iter().map(|r| r.day.as_str()).collect();
        let n_days = days.len().max(1) as f64;
        let mut counts: BTreeMap<u8, f64> = schedule.intervals().iter().map(|iv| (iv.index, 0.0)).collect();
        for r in records {
            let tod = r.tod.unwrap_or_else(|| assign_tod(r, schedule));
            *counts.entry(tod).or_default() += 1.0;
        }
        let per_tod = counts
            .into_iter()
            .map(|(tod, c)| (tod, c / n_days / penetration.rate_for(tod)))
            .collect();
        Self { per_tod }
    }

    pub fn get(&self, tod: u8) -> f64 {
        self.per_tod.get(&tod).copied().unwrap_or(0.0)
    }
}
