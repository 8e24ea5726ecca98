use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::netmodel::{LinkIdx, OdPair, Path, PathId};

pub const DEFAULT_CUT_THRESHOLD: f64 = 0.3;

/// Length-weighted Jaccard similarity of two paths viewed as link sets:
/// shared length over the length covered by either path.
pub fn jaccard_similarity(a: &[LinkIdx], b: &[LinkIdx], link_lengths: &[f64]) -> f64 {
    let sa: BTreeSet<LinkIdx> = a.iter().copied().collect();
    let sb: BTreeSet<LinkIdx> = b.iter().copied().collect();
    let inter: f64 = sa.intersection(&sb).map(|l| link_lengths[l.0]).sum();
    let union: f64 = sa.union(&sb).map(|l| link_lengths[l.0]).sum();
    if union <= 0.0 {
        return if sa == sb { 1.0 } else { 0.0 };
    }
    inter / union
}

/// A distinct link sequence observed for an OD pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPath {
    pub links: Vec<LinkIdx>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathCluster {
    /// Indices into the OD group's observed paths.
    pub members: Vec<usize>,
    /// Index of the representative member.
    pub representative: usize,
    pub observations: u64,
    pub path_id: PathId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdPathClusters {
    pub observed: Vec<ObservedPath>,
    pub clusters: Vec<PathCluster>,
}

/// Representative path set per OD pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathClusterSet {
    pub groups: BTreeMap<OdPair, OdPathClusters>,
    lookup: HashMap<(OdPair, Vec<LinkIdx>), PathId>,
}

impl PathClusterSet {
    /// Representative paths ordered by path id.
    pub fn representative_paths(&self) -> Vec<Path> {
        let mut out: Vec<Path> = self
            .groups
            .iter()
            .flat_map(|(&od, g)| {
                g.clusters.iter().map(move |c| Path {
                    id: c.path_id,
                    od,
                    links: g.observed[c.representative].links.clone(),
                })
            })
            .collect();
        out.sort_by_key(|p| p.id);
        out
    }

    /// Representative path of an observed link sequence.
    pub fn relabel(&self, od: OdPair, links: &[LinkIdx]) -> Option<PathId> {
        self.lookup.get(&(od, links.to_vec())).copied()
    }

    pub fn num_clusters(&self) -> usize {
        self.groups.values().map(|g| g.clusters.len()).sum()
    }

    /// Alternatives per OD, as representative path ids.
    pub fn alternatives(&self) -> BTreeMap<OdPair, Vec<PathId>> {
        self.groups
            .iter()
            .map(|(&od, g)| (od, g.clusters.iter().map(|c| c.path_id).collect()))
            .collect()
    }
}

/// Groups raw observed link sequences into distinct paths per OD pair with
/// observation counts. Output order is deterministic (sorted by sequence).
pub fn group_observed_paths<'a, I>(trips: I) -> BTreeMap<OdPair, Vec<ObservedPath>>
where
    I: IntoIterator<Item = (OdPair, &'a [LinkIdx])>,
{
    let mut counts: BTreeMap<OdPair, BTreeMap<Vec<LinkIdx>, u64>> = BTreeMap::new();
    for (od, links) in trips {
        *counts.entry(od).or_default().entry(links.to_vec()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(od, m)| (od, m.into_iter().map(|(links, count)| ObservedPath { links, count }).collect()))
        .collect()
}

/// Average-linkage agglomerative clustering of each OD's observed paths
/// under distance `1 − J`. Merging stops once the closest pair of clusters is
/// farther apart than `cut_threshold`. The representative of a cluster is its
/// most observed member, then the shorter path, then the lower index.
pub fn cluster_paths(groups: BTreeMap<OdPair, Vec<ObservedPath>>, link_lengths: &[f64], cut_threshold: f64) -> PathClusterSet {
    assert!(cut_threshold > 0.0 && cut_threshold < 1.0, "cut threshold must lie in (0, 1)");
    let mut next_id = 0u32;
    let mut out = PathClusterSet::default();
    for (od, observed) in groups {
        if observed.is_empty() {
            continue;
        }
        let partition = average_linkage(&observed, link_lengths, cut_threshold);
        let mut clusters = Vec::with_capacity(partition.len());
        for members in partition {
            let path_len = |i: usize| -> f64 { observed[i].links.iter().map(|l| link_lengths[l.0]).sum() };
            let representative = *members
                .iter()
                .min_by(|&&a, &&b| {
                    observed[b]
                        .count
                        .cmp(&observed[a].count)
                        .then(path_len(a).total_cmp(&path_len(b)))
                        .then(a.cmp(&b))
                })
                .unwrap();
            let path_id = PathId(next_id);
            next_id += 1;
            for &m in &members {
                out.lookup.insert((od, observed[m].links.clone()), path_id);
            }
            clusters.push(PathCluster {
                observations: members.iter().map(|&m| observed[m].count).sum(),
                members,
                representative,
                path_id,
            });
        }
        out.groups.insert(od, OdPathClusters { observed, clusters });
    }
    out
}

/// Returns clusters as sorted member lists, ordered by smallest member.
/// Cluster distances are kept current with the Lance–Williams update for
/// average linkage.
fn average_linkage(paths: &[ObservedPath], lengths: &[f64], cut: f64) -> Vec<Vec<usize>> {
    let n = paths.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 1.0 - jaccard_similarity(&paths[i].links, &paths[j].links, lengths);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if clusters[a].is_none() {
                continue;
            }
            for b in (a + 1)..n {
                if clusters[b].is_none() {
                    continue;
                }
                if best.is_none_or(|(bd, _, _)| d[a][b] < bd) {
                    best = Some((d[a][b], a, b));
                }
            }
        }
        match best {
            Some((dist, a, b)) if dist <= cut => {
                let cb = clusters[b].take().unwrap();
                let ca = clusters[a].as_mut().unwrap();
                let (na, nb) = (ca.len() as f64, cb.len() as f64);
                ca.extend(cb);
                ca.sort_unstable();
                for k in 0..n {
                    if k != a && clusters[k].is_some() {
                        let v = (na * d[a][k] + nb * d[b][k]) / (na + nb);
                        d[a][k] = v;
                        d[k][a] = v;
                    }
                }
            }
            _ => break,
        }
    }
    clusters.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(ids: &[usize], count: u64) -> ObservedPath {
        ObservedPath {
            links: ids.iter().map(|&i| LinkIdx(i)).collect(),
            count,
        }
    }

    #[test]
    fn worked_similarity_values() {
        let lengths = [100.0, 200.0, 300.0];
        let a = [LinkIdx(0), LinkIdx(1)];
        let b = [LinkIdx(1), LinkIdx(2)];
        assert_eq!(jaccard_similarity(&a, &b, &lengths), 200.0 / 600.0);
        assert_eq!(jaccard_similarity(&a, &a, &lengths), 1.0);
        assert_eq!(jaccard_similarity(&a, &[LinkIdx(2)], &lengths), 0.0);
    }

    #[test]
    fn single_path_is_its_own_cluster() {
        let od = OdPair::new(0, 1);
        let set = cluster_paths([(od, vec![p(&[0, 1], 3)])].into(), &[1.0, 1.0], 0.3);
        let g = &set.groups[&od];
        assert_eq!(g.clusters.len(), 1);
        assert_eq!(g.clusters[0].representative, 0);
        assert_eq!(g.clusters[0].observations, 3);
    }

    #[test]
    fn close_pair_merges() {
        // Nine shared unit links, one private link each: J = 9/11.
        let lengths = vec![1.0; 11];
        let shared: Vec<usize> = (0..9).collect();
        let mut a = shared.clone();
        a.push(9);
        let mut b = shared;
        b.push(10);
        let (pa, pb) = (p(&a, 1), p(&b, 2));
        let j = jaccard_similarity(&pa.links, &pb.links, &lengths);
        assert!((j - 9.0 / 11.0).abs() < 1e-15);
        let od = OdPair::new(0, 1);
        let set = cluster_paths([(od, vec![pa, pb])].into(), &lengths, 0.3);
        let g = &set.groups[&od];
        assert_eq!(g.clusters.len(), 1);
        assert_eq!(g.clusters[0].representative, 1, "most observed member represents");
        assert_eq!(set.relabel(od, &g.observed[0].links), Some(g.clusters[0].path_id));
    }

    #[test]
    fn exact_point_nine_merges_at_point_three() {
        // A = {a, s} and B = {s, b} with |s| = 18, |a| = |b| = 1: J = 18/20.
        let lengths = [18.0, 1.0, 1.0];
        let (a, b) = (p(&[0, 1], 1), p(&[0, 2], 1));
        assert!((jaccard_similarity(&a.links, &b.links, &lengths) - 0.9).abs() < 1e-15);
        let od = OdPair::new(0, 1);
        let set = cluster_paths([(od, vec![a, b])].into(), &lengths, 0.3);
        assert_eq!(set.num_clusters(), 1);
    }

    #[test]
    fn disjoint_paths_stay_apart() {
        let od = OdPair::new(0, 1);
        let set = cluster_paths([(od, vec![p(&[0], 1), p(&[1], 1), p(&[2], 1)])].into(), &[1.0; 3], 0.3);
        assert_eq!(set.num_clusters(), 3);
    }

    #[test]
    fn representative_ties_go_to_shorter_path() {
        let lengths = [10.0, 10.0, 1.0, 30.0];
        let od = OdPair::new(0, 1);
        // Same count; the second path is shorter.
        let set = cluster_paths([(od, vec![p(&[0, 1, 3], 2), p(&[0, 1, 2], 2)])].into(), &lengths, 0.9);
        let g = &set.groups[&od];
        assert_eq!(g.clusters.len(), 1);
        assert_eq!(g.clusters[0].representative, 1);
    }
}
