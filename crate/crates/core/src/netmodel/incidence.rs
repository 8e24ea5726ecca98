use std::collections::{BTreeMap, BTreeSet};

use super::{LinkIdx, Network, NetworkError, OdPair, Path, PathId, Zone};
use crate::sparse::CscMatrix;

/// OD-path, link-path and path-link-length incidence for one path set.
///
/// Column `m` of every matrix corresponds to `path_ids[m]`; row `n` of `phi`
/// corresponds to `od_pairs[n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceSet {
    pub od_pairs: Vec<OdPair>,
    pub path_ids: Vec<PathId>,
    /// N×M, one nonzero per column.
    pub phi: CscMatrix,
    /// E×M, `omega[e, m] = 1` iff link e is on path m.
    pub omega: CscMatrix,
    /// M×E, entry `(m, e)` is the length of link e when it lies on path m.
    pub psi_len: CscMatrix,
}

impl IncidenceSet {
    pub fn num_od(&self) -> usize {
        self.od_pairs.len()
    }

    pub fn num_paths(&self) -> usize {
        self.path_ids.len()
    }

    pub fn num_links(&self) -> usize {
        self.omega.nrows
    }

    pub fn od_index(&self, od: OdPair) -> Option<usize> {
        self.od_pairs.binary_search(&od).ok()
    }

    pub fn path_index(&self, id: PathId) -> Option<usize> {
        self.path_ids.iter().position(|&p| p == id)
    }

    /// OD row of path column `m`.
    pub fn od_of_path(&self, m: usize) -> usize {
        self.phi.col(m).next().expect("every path has an OD").0
    }

    /// Path length read off `psi_len`.
    pub fn path_length(&self, m: usize) -> f64 {
        let psi_t = self.psi_len.transpose();
        psi_t.col(m).map(|(_, v)| v).sum()
    }
}

/// Builds Φ, Ω and Ψᴸ for a validated path set. OD rows are the distinct OD
/// pairs of `paths` in sorted order; path columns follow `paths` order.
pub fn build_incidence(network: &Network, paths: &[Path], zones: &[Zone]) -> Result<IncidenceSet, NetworkError> {
    let zone_ids: BTreeSet<_> = zones.iter().map(|z| z.id).collect();
    for p in paths {
        for z in [p.od.origin, p.od.destination] {
            if !zone_ids.contains(&z) {
                return Err(NetworkError::UnknownZone { path: p.id.0, zone: z.0 });
            }
        }
        if let Some(bad) = p.links.iter().find(|l| l.0 >= network.num_links()) {
            return Err(NetworkError::UnknownLink(format!("#{}", bad.0)));
        }
        if !network.validate_path(&p.links) {
            return Err(NetworkError::InvalidPath(p.id.0));
        }
    }

    let od_pairs: Vec<OdPair> = paths.iter().map(|p| p.od).collect::<BTreeSet<_>>().into_iter().collect();
    let od_row: BTreeMap<OdPair, usize> = od_pairs.iter().enumerate().map(|(i, &od)| (od, i)).collect();

    let mut phi = Vec::with_capacity(paths.len());
    let mut omega = Vec::new();
    let mut psi = Vec::new();
    for (m, p) in paths.iter().enumerate() {
        phi.push((od_row[&p.od], m, 1.0));
        let distinct: BTreeSet<LinkIdx> = p.links.iter().copied().collect();
        for l in distinct {
            omega.push((l.0, m, 1.0));
            psi.push((m, l.0, network.link(l).length));
        }
    }
    let (n, m, e) = (od_pairs.len(), paths.len(), network.num_links());
    Ok(IncidenceSet {
        od_pairs,
        path_ids: paths.iter().map(|p| p.id).collect(),
        phi: CscMatrix::from_triplets(n, m, &phi),
        omega: CscMatrix::from_triplets(e, m, &omega),
        psi_len: CscMatrix::from_triplets(m, e, &psi),
    })
}
