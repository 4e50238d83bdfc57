//! Household and region ingestion, preprocessing, poverty labels and the
//! train/test split.

mod dataset;
mod labels;
mod preprocess;
mod regions;
mod schema;
mod split;

pub use dataset::{load_households, read_households, Column, ColumnData, Dataset, KEY_COLUMNS};
pub use labels::{binarize_target, nearest_rank, PovertyLabels};
pub use preprocess::{
    apply_schema_rules, impute_region_mean, one_hot_encode, winsorize_recode, ImputeSummary,
};
pub use regions::{Region, RegionTable};
pub use schema::{Predicate, RecodeRule, VariableKind, VariableSpec};
pub use split::{split_indices, split_train_test};
