//! Geometric refinement of lifted segments: ground removal, a multi-density
//! DBSCAN cluster ensemble over the non-ground points, and the replace and
//! filter strategies that match segments against the ensemble.

mod dbscan;
mod ensemble;
mod ground;

pub use dbscan::dbscan;
pub use ensemble::{
    build_cluster_ensemble, filter_by_clusters, replace_with_clusters, Cluster, ClusterPool, DEFAULT_EPSILONS,
    DEFAULT_MIN_PTS, DEFAULT_OVERLAP,
};
pub use ground::{remove_ground, GroundParams};

use serde::{Deserialize, Serialize};

/// How lifted segments are refined against the cluster ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStrategy {
    /// Swap a segment's points for its best-matching cluster.
    #[default]
    Replace,
    /// Drop segments without a matching cluster (baseline).
    Filter,
    None,
}
