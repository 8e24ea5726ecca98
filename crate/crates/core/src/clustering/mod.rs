//! Demand zoning, path-set reduction and assignment maps.

mod assignment;
mod gmm;
mod paths;
mod zones;

pub use assignment::{build_assignment_map, read_assignment_maps, write_assignment_maps, AssignmentMap, LabeledTrip};
pub use gmm::{fit_gmm, select_k_by_bic, EmSettings, GmmFit, GmmModel, Point};
pub use paths::{
    cluster_paths, group_observed_paths, jaccard_similarity, ObservedPath, OdPathClusters, PathCluster, PathClusterSet,
    DEFAULT_CUT_THRESHOLD,
};
pub use zones::{assign_zones, label_endpoints, LabeledEndpoint};

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("cannot fit {k} components to {n} points")]
    TooFewPoints { k: usize, n: usize },
    #[error("path {0} is not in the incidence set")]
    UnknownPath(u32),
    #[error("trip OD does not match the OD of path {0}")]
    OdMismatch(u32),
    #[error("malformed assignment row {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
