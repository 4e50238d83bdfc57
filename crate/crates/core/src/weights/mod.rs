//! Contiguity from centroid triangulation, row standardisation and spatial lags.

mod contiguity;
mod delaunay;
mod lag;

pub use contiguity::{align_to, row_standardize, ContiguityMatrix, RowStandardizedWeights};
pub use delaunay::{delaunay_neighbors, triangulate};
pub use lag::{lag_features_to_households, region_means};
