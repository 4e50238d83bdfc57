//! Spatial machine learning for poverty targeting.
//!
//! Households are linked to regions; regions are linked by Delaunay
//! contiguity. On top of that graph the crate provides global and local
//! spatial autocorrelation, contiguity-constrained regionalization, PCA,
//! eight classifier/regressor families trained globally or per cluster, and
//! exclusion/inclusion error reporting.

pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod pca;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod weights;

pub use cluster::{
    assert_connected, constrained_divisive_cluster, cut_dendrogram, ClusterAssignment, Dendrogram,
};
pub use data::{Dataset, PovertyLabels, Region, RegionTable, VariableSpec};
pub use error::{Error, Result};
pub use eval::{ConfusionCounts, GridColumn, TargetingReport};
pub use models::{ClusterModelSet, Family, ModelSpec, TrainedModel};
pub use pca::{PcaModel, PcaRule};
pub use weights::{ContiguityMatrix, RowStandardizedWeights};
