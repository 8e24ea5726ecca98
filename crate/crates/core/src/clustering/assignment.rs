use std::io::Write;

use super::ClusterError;
use crate::netmodel::{IncidenceSet, OdPair, PathId};
use crate::sparse::CscMatrix;

/// A trip relabelled to its representative path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledTrip {
    pub od: OdPair,
    pub path: PathId,
    pub tod: u8,
}

/// Per-interval share of each OD pair's trips on each representative path.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMap {
    pub tod: u8,
    /// M×N; column n holds the path shares of OD pair n.
    pub g: CscMatrix,
    /// OD rows with no observed trips in this interval (all-zero columns).
    pub unobserved_ods: Vec<usize>,
}

impl AssignmentMap {
    pub fn column_sum(&self, od: usize) -> f64 {
        self.g.col(od).map(|(_, v)| v).sum()
    }
}

/// Pools the trips of interval `tod` over all days and divides path counts
/// by OD totals.
pub fn build_assignment_map(trips: &[LabeledTrip], tod: u8, incidence: &IncidenceSet) -> Result<AssignmentMap, ClusterError> {
    let (n, m) = (incidence.num_od(), incidence.num_paths());
    let mut path_counts = vec![0.0; m];
    let mut od_counts = vec![0.0; n];
    for t in trips.iter().filter(|t| t.tod == tod) {
        let col = incidence.path_index(t.path).ok_or(ClusterError::UnknownPath(t.path.0))?;
        let row = incidence.od_of_path(col);
        if incidence.od_pairs[row] != t.od {
            return Err(ClusterError::OdMismatch(t.path.0));
        }
        path_counts[col] += 1.0;
        od_counts[row] += 1.0;
    }
    let triplets: Vec<(usize, usize, f64)> = (0..m)
        .filter(|&p| path_counts[p] > 0.0)
        .map(|p| {
            let od = incidence.od_of_path(p);
            (p, od, path_counts[p] / od_counts[od])
        })
        .collect();
    let unobserved_ods: Vec<usize> = (0..n).filter(|&i| od_counts[i] == 0.0).collect();
    if !unobserved_ods.is_empty() {
        log::info!("TOD {tod}: {} OD pairs unobserved, zero assignment columns", unobserved_ods.len());
    }
    Ok(AssignmentMap {
        tod,
        g: CscMatrix::from_triplets(m, n, &triplets),
        unobserved_ods,
    })
}

/// Sparse triplets `tod,path_id,od_id,share` with `od_id` as `origin-dest`.
pub fn write_assignment_maps<W: Write>(maps: &[AssignmentMap], incidence: &IncidenceSet, out: W) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tod", "path_id", "od_id", "share"])?;
    for map in maps {
        for (p, od, share) in map.g.triplets() {
            let pair = incidence.od_pairs[od];
            w.write_record([
                map.tod.to_string(),
                incidence.path_ids[p].0.to_string(),
                format!("{}-{}", pair.origin.0, pair.destination.0),
                share.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads maps written by [`write_assignment_maps`] back against the same
/// incidence set. Intervals listed in `tods` with no rows yield all-zero maps.
pub fn read_assignment_maps<R: std::io::Read>(
    reader: R,
    incidence: &IncidenceSet,
    tods: &[u8],
) -> Result<Vec<AssignmentMap>, ClusterError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut per_tod: std::collections::BTreeMap<u8, Vec<(usize, usize, f64)>> = tods.iter().map(|&t| (t, Vec::new())).collect();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || ClusterError::Malformed(format!("{:?}", rec));
        let tod: u8 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let pid: u32 = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let share: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let col = incidence.path_index(PathId(pid)).ok_or(ClusterError::UnknownPath(pid))?;
        per_tod.entry(tod).or_default().push((col, incidence.od_of_path(col), share));
    }
    let (n, m) = (incidence.num_od(), incidence.num_paths());
    Ok(per_tod
        .into_iter()
        .map(|(tod, trip)| {
            let g = CscMatrix::from_triplets(m, n, &trip);
            let unobserved_ods = (0..n).filter(|&i| g.col(i).next().is_none()).collect();
            AssignmentMap { tod, g, unobserved_ods }
        })
        .collect())
}
