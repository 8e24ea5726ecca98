use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::engine::{SimResult, SimTrip};
use super::SimError;
use crate::netmodel::{Network, PathId, TodSchedule};

#[derive(Serialize, Deserialize)]
struct TripRow {
    trip_id: u64,
    path_id: u32,
    departure_time_s: f64,
}

pub fn read_trip_table<R: Read>(reader: R) -> Result<Vec<SimTrip>, SimError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: TripRow = row?;
        if !row.departure_time_s.is_finite() || row.departure_time_s < 0.0 {
            return Err(SimError::Malformed(format!(
                "trip {} has departure {}",
                row.trip_id, row.departure_time_s
            )));
        }
        out.push(SimTrip {
            trip_id: row.trip_id,
            path: PathId(row.path_id),
            departure: row.departure_time_s,
        });
    }
    Ok(out)
}

pub fn write_trip_table<W: Write>(trips: &[SimTrip], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    for t in trips {
        w.serialize(TripRow {
            trip_id: t.trip_id,
            path_id: t.path.0,
            departure_time_s: t.departure,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// `trip_id, travel_time_s, completed`; travel time is empty when the trip
/// did not complete.
pub fn write_sim_result<W: Write>(result: &SimResult, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trip_id", "travel_time_s", "completed"])?;
    for t in &result.trips {
        let tt = t.travel_time.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([t.trip_id.to_string(), tt, t.travel_time.is_some().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `link_id, tod, entries, exits, mean_speed_mps` for every link and TOD
/// interval; the drain period after midnight is labelled `drain`.
pub fn write_link_flows<W: Write>(result: &SimResult, network: &Network, schedule: &TodSchedule, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["link_id", "tod", "entries", "exits", "mean_speed_mps"])?;
    for (link, stats) in network.links().iter().zip(&result.links) {
        for (b, s) in stats.per_tod.iter().enumerate() {
            let tod = if b < schedule.len() {
                (b + 1).to_string()
            } else {
                "drain".to_string()
            };
            let speed = s.mean_speed().map(|v| v.to_string()).unwrap_or_default();
            w.write_record([link.id.clone(), tod, s.entries.to_string(), s.exits.to_string(), speed])?;
        }
    }
    w.flush()?;
    Ok(())
}
