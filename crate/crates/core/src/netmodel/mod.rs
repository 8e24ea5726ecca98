//! Road network, paths, zones, time-of-day schedule and incidence matrices.

mod grid;
mod incidence;
mod io;
mod tod;

pub use grid::grid_network;
pub use incidence::{build_incidence, IncidenceSet};
pub use io::{load_network, load_zones, read_paths, write_network, write_paths, write_zones};
pub use tod::{TodInterval, TodSchedule};

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Saturation flow per lane used when a link has no explicit capacity.
pub const SATURATION_FLOW_VPH: f64 = 1800.0;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
    #[error("{file}:{line}: link {link} references unknown node {node}")]
    DanglingNode {
        file: String,
        line: usize,
        link: String,
        node: String,
    },
    #[error("{file}:{line}: link {link} has non-positive {what} {value}")]
    NonPositive {
        file: String,
        line: usize,
        link: String,
        what: &'static str,
        value: f64,
    },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("unknown link id {0}")]
    UnknownLink(String),
    #[error("path {path} references unknown zone {zone}")]
    UnknownZone { path: u32, zone: u32 },
    #[error("path {0} is not a connected link sequence")]
    InvalidPath(u32),
    #[error("link {link} assigned to zones {first} and {second}")]
    ZoneOverlap { link: String, first: u32, second: u32 },
    #[error("invalid time-of-day schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Dense index of a link inside a [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkIdx(pub usize);

/// Dense index of a node inside a [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeIdx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ZoneId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PathId(pub u32);

/// Ordered (origin zone, destination zone) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: ZoneId,
    pub destination: ZoneId,
}

impl OdPair {
    pub fn new(origin: u32, destination: u32) -> Self {
        Self {
            origin: ZoneId(origin),
            destination: ZoneId(destination),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub is_junction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    pub from: NodeIdx,
    pub to: NodeIdx,
    /// Meters.
    pub length: f64,
    /// Meters per second.
    pub speed_limit: f64,
    pub lanes: u32,
    /// Hourly service capacity in vehicles.
    pub capacity_vph: f64,
}

impl Link {
    /// Capacity bound for an interval of `hours` length.
    pub fn capacity_bound(&self, hours: f64) -> f64 {
        self.capacity_vph * hours
    }

    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed_limit
    }
}

/// Directed road network. Immutable once built; speed-limit re-estimation
/// produces a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
    node_index: HashMap<String, NodeIdx>,
    link_index: HashMap<String, LinkIdx>,
}

impl Network {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>) -> Result<Self, NetworkError> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id.clone(), NodeIdx(i)).is_some() {
                return Err(NetworkError::DuplicateId(n.id.clone()));
            }
        }
        let mut link_index = HashMap::with_capacity(links.len());
        for (i, l) in links.iter().enumerate() {
            if link_index.insert(l.id.clone(), LinkIdx(i)).is_some() {
                return Err(NetworkError::DuplicateId(l.id.clone()));
            }
            if l.from.0 >= nodes.len() || l.to.0 >= nodes.len() {
                return Err(NetworkError::DanglingNode {
                    file: "<memory>".into(),
                    line: i + 1,
                    link: l.id.clone(),
                    node: format!("#{}", l.from.0.max(l.to.0)),
                });
            }
            for (what, value) in [("length", l.length), ("speed", l.speed_limit)] {
                if value.is_nan() || value <= 0.0 {
                    return Err(NetworkError::NonPositive {
                        file: "<memory>".into(),
                        line: i + 1,
                        link: l.id.clone(),
                        what,
                        value,
                    });
                }
            }
        }
        Ok(Self {
            nodes,
            links,
            node_index,
            link_index,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: LinkIdx) -> &Link {
        &self.links[idx.0]
    }

    pub fn node(&self, idx: NodeIdx) -> &Node {
        &self.nodes[idx.0]
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_by_id(&self, id: &str) -> Option<LinkIdx> {
        self.link_index.get(id).copied()
    }

    pub fn node_by_id(&self, id: &str) -> Option<NodeIdx> {
        self.node_index.get(id).copied()
    }

    /// Returns a copy with the given per-link speed limits.
    pub fn with_speed_limits(&self, speeds: &[f64]) -> Self {
        assert_eq!(speeds.len(), self.links.len());
        let mut out = self.clone();
        for (l, &s) in out.links.iter_mut().zip(speeds) {
            l.speed_limit = s;
        }
        out
    }

    /// Outgoing links per node, in link order.
    pub fn out_links(&self) -> Vec<Vec<LinkIdx>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, l) in self.links.iter().enumerate() {
            out[l.from.0].push(LinkIdx(i));
        }
        out
    }

    /// True iff every id exists and consecutive links are adjacent.
    pub fn validate_path(&self, links: &[LinkIdx]) -> bool {
        if links.is_empty() || links.iter().any(|l| l.0 >= self.links.len()) {
            return false;
        }
        links.windows(2).all(|w| self.links[w[0].0].to == self.links[w[1].0].from)
    }

    /// Like [`Network::validate_path`] but over external link ids.
    pub fn validate_path_ids<S: AsRef<str>>(&self, ids: &[S]) -> bool {
        let resolved: Option<Vec<LinkIdx>> = ids.iter().map(|s| self.link_by_id(s.as_ref())).collect();
        resolved.is_some_and(|p| self.validate_path(&p))
    }

    pub fn path_length(&self, links: &[LinkIdx]) -> f64 {
        links.iter().map(|l| self.links[l.0].length).sum()
    }

    pub fn path_free_flow_time(&self, links: &[LinkIdx]) -> f64 {
        links.iter().map(|l| self.links[l.0].free_flow_time()).sum()
    }

    /// Nearest link to a planar point by point-to-segment distance. Ties go
    /// to the lower link index.
    pub fn nearest_link(&self, x: f64, y: f64) -> Option<LinkIdx> {
        let mut best: Option<(f64, usize)> = None;
        for (i, l) in self.links.iter().enumerate() {
            let a = &self.nodes[l.from.0];
            let b = &self.nodes[l.to.0];
            let d = point_segment_dist2(x, y, a.x, a.y, b.x, b.y);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| LinkIdx(i))
    }

    /// Breadth-first (fewest links) path between two nodes.
    pub fn bfs_path(&self, from: NodeIdx, to: NodeIdx) -> Option<Vec<LinkIdx>> {
        let out = self.out_links();
        let mut pred: Vec<Option<LinkIdx>> = vec![None; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = std::collections::VecDeque::from([from]);
        seen[from.0] = true;
        while let Some(n) = queue.pop_front() {
            if n == to {
                break;
            }
            for &l in &out[n.0] {
                let next = self.links[l.0].to;
                if !seen[next.0] {
                    seen[next.0] = true;
                    pred[next.0] = Some(l);
                    queue.push_back(next);
                }
            }
        }
        if !seen[to.0] || from == to {
            return None;
        }
        let mut path = Vec::new();
        let mut cur = to;
        while cur != from {
            let l = pred[cur.0]?;
            path.push(l);
            cur = self.links[l.0].from;
        }
        path.reverse();
        Some(path)
    }
}

fn point_segment_dist2(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    (px - cx).powi(2) + (py - cy).powi(2)
}

/// A path through the network attached to an OD pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub id: PathId,
    pub od: OdPair,
    pub links: Vec<LinkIdx>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: ZoneId,
    pub member_links: BTreeSet<LinkIdx>,
}

/// Link-to-zone lookup built from a zone list.
pub fn zone_lookup(network: &Network, zones: &[Zone]) -> Result<Vec<Option<ZoneId>>, NetworkError> {
    let mut out: Vec<Option<ZoneId>> = vec![None; network.num_links()];
    for z in zones {
        for &l in &z.member_links {
            if l.0 >= out.len() {
                return Err(NetworkError::UnknownLink(format!("#{}", l.0)));
            }
            if let Some(prev) = out[l.0] {
                return Err(NetworkError::ZoneOverlap {
                    link: network.link(l).id.clone(),
                    first: prev.0,
                    second: z.id.0,
                });
            }
            out[l.0] = Some(z.id);
        }
    }
    Ok(out)
}
