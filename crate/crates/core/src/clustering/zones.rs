use std::collections::{BTreeMap, BTreeSet};

use super::gmm::{GmmModel, Point};
use crate::netmodel::{LinkIdx, Network, Zone, ZoneId};

/// A trip endpoint snapped to its nearest link and labelled with its most
/// responsible mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledEndpoint {
    pub link: LinkIdx,
    pub label: usize,
}

pub fn label_endpoints(network: &Network, model: &GmmModel, points: &[Point]) -> Vec<LabeledEndpoint> {
    points
        .iter()
        .filter_map(|p| {
            network.nearest_link(p[0], p[1]).map(|link| LabeledEndpoint {
                link,
                label: model.predict(p),
            })
        })
        .collect()
}

/// Majority vote per link over the labels of its endpoints. Ties go to the
/// lower label; links without endpoints stay unassigned. Zone ids equal the
/// winning component labels.
pub fn assign_zones(network: &Network, endpoints: &[LabeledEndpoint]) -> Vec<Zone> {
    let mut votes: BTreeMap<LinkIdx, BTreeMap<usize, usize>> = BTreeMap::new();
    for e in endpoints {
        if e.link.0 < network.num_links() {
            *votes.entry(e.link).or_default().entry(e.label).or_default() += 1;
        }
    }
    let mut zones: BTreeMap<usize, BTreeSet<LinkIdx>> = BTreeMap::new();
    for (link, counts) in votes {
        // BTreeMap iterates labels ascending, so the first maximum wins ties.
        let mut best = (0usize, usize::MAX);
        for (&label, &c) in &counts {
            if c > best.0 {
                best = (c, label);
            }
        }
        zones.entry(best.1).or_default().insert(link);
    }
    zones
        .into_iter()
        .map(|(label, member_links)| Zone {
            id: ZoneId(label as u32),
            member_links,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::grid_network;

    fn zone_of(zones: &[Zone], l: usize) -> Option<u32> {
        zones.iter().find(|z| z.member_links.contains(&LinkIdx(l))).map(|z| z.id.0)
    }

    #[test]
    fn strict_majority_and_tie_break() {
        let net = grid_network(3, 100.0, 10.0, 1, None);
        let ep = |l, label| LabeledEndpoint { link: LinkIdx(l), label };
        let zones = assign_zones(&net, &[ep(0, 3), ep(0, 7), ep(0, 3), ep(1, 5), ep(1, 2)]);
        assert_eq!(zone_of(&zones, 0), Some(3));
        assert_eq!(zone_of(&zones, 1), Some(2));
        assert_eq!(zone_of(&zones, 2), None);
    }
}
