//! Global and subset Moran's I with permutation inference, and Getis-Ord Gi*.

mod getis_ord;
mod moran;

pub use getis_ord::{
    getis_ord, two_sided_p, HotspotClass, LocalStat, LocalStatResult, HOTSPOT_ALPHA,
};
pub use moran::{
    moran_i, moran_permutation_test, moran_subset, Alternative, MoranResult, PermutationConfig,
    SubsetMoran,
};
