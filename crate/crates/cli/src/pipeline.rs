//! In-memory pipeline steps. The file-backed stages and the acceptance suite
//! both call these, so a stage's artifact is a pure function of its inputs.

use std::collections::BTreeMap;

use geotarget_core::cluster::standardize_columns;
use geotarget_core::data::{
    apply_schema_rules, binarize_target, impute_region_mean, nearest_rank, one_hot_encode,
    split_train_test,
};
use geotarget_core::eval::{
    aggregate_report, comparison_grid, ComparisonGrid, EvalRows, GridEntry, ReportMeta,
};
use geotarget_core::models::{
    fit, fit_per_cluster, predict, predict_union, OutputKind, Prediction,
};
use geotarget_core::pca::{cumulative_variance, kaiser_count, pca_fit};
use geotarget_core::rng::derive_seed;
use geotarget_core::stats::{
    getis_ord, moran_permutation_test, moran_subset, LocalStatResult, MoranResult,
    PermutationConfig, SubsetMoran,
};
use geotarget_core::weights::{lag_features_to_households, region_means, RowStandardizedWeights};
use geotarget_core::{
    constrained_divisive_cluster, cut_dendrogram, ClusterAssignment, ClusterModelSet,
    ContiguityMatrix, Dataset, Dendrogram, Error, Family, GridColumn, ModelSpec, PcaModel, PcaRule,
    PovertyLabels, RegionTable, TrainedModel,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PreprocessConfig, StatsConfig, SubsetConfig};

type Result<T> = geotarget_core::Result<T>;

/// Name of the region-mean log expenditure clustering feature.
pub const LOG_PCE_FEATURE: &str = "log_pce";

pub fn model_seed(master: u64, family: Family) -> u64 {
    derive_seed(master, &format!("model:{family}"))
}

/// Benchmark first, then every (k, pca, lagged) combination in the given order.
pub fn grid_columns(ks: &[usize], pca: &[bool], lagged: &[bool]) -> Vec<GridColumn> {
    let mut out = vec![GridColumn::Benchmark];
    for &k in ks {
        for &p in pca {
            for &l in lagged {
                out.push(GridColumn::Sml {
                    k,
                    pca: p,
                    lagged: l,
                });
            }
        }
    }
    out
}

/// Recodes, then imputation, then one-hot encoding.
pub fn preprocess(ds: &Dataset, regions: &RegionTable, cfg: &PreprocessConfig) -> Result<Dataset> {
    let mut ds = ds.clone();
    if cfg.apply_recodes {
        let (next, counts) = apply_schema_rules(&ds)?;
        for (var, n) in counts.iter().filter(|(_, n)| **n > 0) {
            log::info!("recoded {n} values of '{var}'");
        }
        ds = next;
    }
    for rule in &cfg.impute {
        let (next, summary) = impute_region_mean(&ds, &rule.variable, rule.target_year, regions)?;
        log::info!(
            "imputed '{}' for {}: {summary:?}",
            rule.variable,
            rule.target_year
        );
        ds = next;
    }
    for var in &cfg.one_hot {
        ds = one_hot_encode(&ds, var, cfg.collapse_binary)?;
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub quantile: f64,
    /// Poverty line on the expenditure scale, from training rows.
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub train: Dataset,
    pub test: Dataset,
    pub features: Vec<String>,
    pub threshold: Threshold,
}

impl Ingested {
    pub fn train_labels(&self) -> PovertyLabels {
        PovertyLabels::apply(&self.train, self.threshold.value, self.threshold.quantile)
    }

    pub fn test_labels(&self) -> PovertyLabels {
        PovertyLabels::apply(&self.test, self.threshold.value, self.threshold.quantile)
    }

    pub fn all(&self) -> Result<Dataset> {
        self.train.concat(&self.test)
    }
}

/// Splits a preprocessed dataset and fixes the poverty line on the training part.
pub fn split_and_label(
    ds: &Dataset,
    regions: &RegionTable,
    features: Option<&[String]>,
    train_fraction: f64,
    split_seed: u64,
    quantile: f64,
) -> Result<Ingested> {
    ds.check_regions(regions)?;
    let features = match features {
        Some(f) => f.to_vec(),
        None => ds.numeric_feature_names(),
    };
    if features.is_empty() {
        return Err(Error::Schema("no numeric model features".into()));
    }
    ds.feature_matrix(&features)?;
    let (train, test) = split_train_test(ds, train_fraction, split_seed)?;
    let labels = binarize_target(&train, quantile, &train)?;
    Ok(Ingested {
        train,
        test,
        features,
        threshold: Threshold {
            quantile,
            value: labels.threshold_value,
        },
    })
}

/// Mean log expenditure per region in `region_ids` order; empty regions take the overall mean.
pub fn region_mean_log_pce(ds: &Dataset, region_ids: &[String]) -> Result<Vec<f64>> {
    let index: std::collections::HashMap<&str, usize> = region_ids
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let mut sums = vec![0.0; region_ids.len()];
    let mut counts = vec![0usize; region_ids.len()];
    for (r, p) in ds.region_id.iter().zip(&ds.pce) {
        let g = *index.get(r.as_str()).ok_or_else(|| {
            Error::invalid(format!("household region '{r}' is not in the region table"))
        })?;
        sums[g] += p.ln();
        counts[g] += 1;
    }
    let overall = if ds.is_empty() {
        0.0
    } else {
        sums.iter().sum::<f64>() / ds.len() as f64
    };
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { overall })
        .collect())
}

#[derive(Debug, Clone)]
pub struct SubsetOutcome {
    pub name: String,
    pub result: std::result::Result<SubsetMoran, String>,
}

#[derive(Debug, Clone)]
pub struct StatsOutput {
    pub region_values: Vec<f64>,
    pub moran: MoranResult,
    pub subsets: Vec<SubsetOutcome>,
    pub getis_ord: LocalStatResult,
}

/// Regions whose value lies in the nearest-rank quantile interval `(lo, hi]`.
pub fn quantile_subset(
    values: &[f64],
    region_ids: &[String],
    lo: f64,
    hi: f64,
) -> Result<Vec<String>> {
    let lo_v = if lo <= 0.0 {
        f64::NEG_INFINITY
    } else {
        nearest_rank(values, lo)?
    };
    let hi_v = if hi >= 1.0 {
        f64::INFINITY
    } else {
        nearest_rank(values, hi)?
    };
    Ok(values
        .iter()
        .zip(region_ids)
        .filter(|(&v, _)| lo_v < v && v <= hi_v)
        .map(|(_, r)| r.clone())
        .collect())
}

/// Global and subset Moran's I and Getis-Ord Gi* on region mean log expenditure.
pub fn spatial_stats(
    ds: &Dataset,
    w: &ContiguityMatrix,
    wrs: &RowStandardizedWeights,
    cfg: &StatsConfig,
    seed: u64,
) -> Result<StatsOutput> {
    let ids = w.region_ids().to_vec();
    let values = region_mean_log_pce(ds, &ids)?;
    let moran = moran_permutation_test(
        &values,
        wrs,
        &PermutationConfig {
            n_permutations: cfg.n_permutations,
            seed,
            alternative: cfg.alternative,
            parallel: cfg.parallel,
        },
    )?;
    let subsets = cfg
        .subsets
        .iter()
        .map(|s| subset_outcome(s, &values, &ids, wrs))
        .collect::<Result<Vec<_>>>()?;
    let getis_ord = getis_ord(&values, w)?;
    Ok(StatsOutput {
        region_values: values,
        moran,
        subsets,
        getis_ord,
    })
}

fn subset_outcome(
    s: &SubsetConfig,
    values: &[f64],
    ids: &[String],
    wrs: &RowStandardizedWeights,
) -> Result<SubsetOutcome> {
    let members = match (&s.regions, s.quantile_range) {
        (Some(r), _) => r.clone(),
        (None, Some([lo, hi])) => quantile_subset(values, ids, lo, hi)?,
        (None, None) => {
            return Err(Error::invalid(format!(
                "subset '{}' selects no regions",
                s.name
            )))
        }
    };
    let result = moran_subset(values, wrs, &members).map_err(|e| {
        log::warn!("subset '{}' Moran's I undefined: {e}", s.name);
        e.to_string()
    });
    Ok(SubsetOutcome {
        name: s.name.clone(),
        result,
    })
}

/// Region-level clustering features from training rows, standardised by column.
pub fn cluster_features(
    train: &Dataset,
    region_ids: &[String],
    features: &[String],
) -> Result<DMatrix<f64>> {
    let household: Vec<String> = features
        .iter()
        .filter(|f| *f != LOG_PCE_FEATURE)
        .cloned()
        .collect();
    let means = region_means(train, &household, region_ids)?;
    let log_pce = if features.iter().any(|f| f == LOG_PCE_FEATURE) {
        Some(region_mean_log_pce(train, region_ids)?)
    } else {
        None
    };
    let mut raw = DMatrix::zeros(region_ids.len(), features.len());
    let mut h = 0;
    for (j, f) in features.iter().enumerate() {
        if f == LOG_PCE_FEATURE {
            raw.column_mut(j)
                .copy_from_slice(log_pce.as_deref().unwrap_or_default());
        } else {
            raw.set_column(j, &means.column(h));
            h += 1;
        }
    }
    let (z, kept) = standardize_columns(&raw);
    if kept.is_empty() {
        return Err(Error::ZeroVariance(
            "every clustering feature is constant across regions".into(),
        ));
    }
    Ok(z)
}

/// Dendrogram down to the largest requested k, and one connected cut per k.
pub fn cluster_regions(
    features: &DMatrix<f64>,
    w: &ContiguityMatrix,
    ks: &[usize],
) -> Result<(Dendrogram, BTreeMap<usize, ClusterAssignment>)> {
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let dendrogram = constrained_divisive_cluster(features, w, k_max)?;
    let mut cuts = BTreeMap::new();
    for &k in ks {
        let a = cut_dendrogram(&dendrogram, k)?;
        if !geotarget_core::assert_connected(&a, w) {
            return Err(Error::Geometry(format!(
                "cut at k = {k} has a disconnected cluster"
            )));
        }
        cuts.insert(k, a);
    }
    Ok((dendrogram, cuts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSelection {
    pub n_features: usize,
    pub n_components: usize,
    pub kaiser: usize,
    /// `None` when the evidence cannot be evaluated, with the reason logged.
    pub minka: Option<usize>,
    pub cumulative_90: usize,
    pub cumulative_fraction_at_chosen: f64,
    pub rule: PcaRule,
    pub chosen: usize,
}

/// Correlation PCA of the training features and the dimension each rule picks.
pub fn pca_summary(
    train: &Dataset,
    features: &[String],
    rule: PcaRule,
) -> Result<(PcaModel, PcaSelection)> {
    let x = train.feature_matrix(features)?;
    let model = pca_fit(&x, true)?;
    let minka = model
        .select(PcaRule::Minka)
        .map_err(|e| log::warn!("Minka dimension unavailable: {e}"))
        .ok();
    let chosen = model.select(rule)?.min(model.n_components());
    let sel = PcaSelection {
        n_features: features.len(),
        n_components: model.n_components(),
        kaiser: kaiser_count(&model)?,
        minka,
        cumulative_90: model.select(PcaRule::Cumulative { threshold: 0.9 })?,
        cumulative_fraction_at_chosen: cumulative_variance(&model, chosen)?,
        rule,
        chosen,
    };
    Ok((model, sel))
}

/// Appends `lag_<feature>` columns to both parts. Region means use every
/// household, since features carry no target information.
pub fn add_lag_columns(
    train: &Dataset,
    test: &Dataset,
    features: &[String],
    wrs: &RowStandardizedWeights,
) -> Result<(Dataset, Dataset)> {
    let all = train.concat(test)?;
    let means = region_means(&all, features, wrs.region_ids())?;
    Ok((
        lag_features_to_households(wrs, &means, features, train)?,
        lag_features_to_households(wrs, &means, features, test)?,
    ))
}

/// Everything needed to fit and evaluate a comparison grid.
#[derive(Debug, Clone)]
pub struct GridPlan {
    pub families: Vec<Family>,
    pub columns: Vec<GridColumn>,
    pub pca_rule: PcaRule,
    pub hyperparameters: BTreeMap<Family, BTreeMap<String, f64>>,
    pub master_seed: u64,
}

impl GridPlan {
    pub fn spec(&self, family: Family, pca: bool, lagged: bool) -> ModelSpec {
        let mut spec = ModelSpec::new(family, model_seed(self.master_seed, family));
        spec.hyperparameters = self
            .hyperparameters
            .get(&family)
            .cloned()
            .unwrap_or_default();
        spec.use_lagged_features = lagged;
        spec.pca = pca.then_some(self.pca_rule);
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedCell {
    Global(Box<TrainedModel>),
    Clustered(Box<ClusterModelSet>),
}

impl FittedCell {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub family: Family,
    pub column: GridColumn,
    pub prediction: Prediction,
    pub clusters: Option<Vec<usize>>,
    /// Kept only when requested, since ensembles are large.
    pub model: Option<FittedCell>,
}

/// Training and test rows for a grid; lagged columns must already be present
/// when any column uses them.
pub struct GridData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub train_labels: &'a PovertyLabels,
    pub features: &'a [String],
    pub assignments: &'a BTreeMap<usize, ClusterAssignment>,
}

fn train_family(
    plan: &GridPlan,
    data: &GridData<'_>,
    family: Family,
    keep_models: bool,
) -> Result<Vec<CellResult>> {
    let y = data.train.log_pce();
    let mut globals: BTreeMap<(bool, bool), TrainedModel> = BTreeMap::new();
    let mut out = Vec::with_capacity(plan.columns.len());
    for &column in &plan.columns {
        let (pca, lagged) = (column.pca(), column.lagged());
        let spec = plan.spec(family, pca, lagged);
        let global = match globals.get(&(pca, lagged)) {
            Some(m) => m.clone(),
            None => {
                let x = data
                    .train
                    .feature_matrix(&spec.feature_columns(data.features))?;
                let m = fit(&spec, &x, &y, data.train_labels)?;
                globals.insert((pca, lagged), m.clone());
                m
            }
        };
        let cell = match column {
            GridColumn::Benchmark => {
                let x = data
                    .test
                    .feature_matrix(&spec.feature_columns(data.features))?;
                let prediction = predict(&global, &x)?;
                CellResult {
                    family,
                    column,
                    prediction,
                    clusters: None,
                    model: keep_models.then(|| FittedCell::Global(Box::new(global))),
                }
            }
            GridColumn::Sml { k, .. } => {
                let assignment = data
                    .assignments
                    .get(&k)
                    .ok_or_else(|| Error::invalid(format!("no cluster assignment for k = {k}")))?;
                let set = fit_per_cluster(
                    &spec,
                    data.train,
                    data.train_labels,
                    data.features,
                    assignment,
                    Some(global),
                )?;
                let u = predict_union(&set, data.test)?;
                CellResult {
                    family,
                    column,
                    prediction: Prediction {
                        labels: u.labels,
                        scores: u.scores,
                    },
                    clusters: Some(u.clusters),
                    model: keep_models.then(|| FittedCell::Clustered(Box::new(set))),
                }
            }
        };
        out.push(cell);
    }
    Ok(out)
}

/// Fits every (family, column) cell and predicts the test rows. Families run in parallel.
pub fn train_grid(
    plan: &GridPlan,
    data: &GridData<'_>,
    keep_models: bool,
) -> Result<Vec<CellResult>> {
    let per_family: Vec<Vec<CellResult>> = plan
        .families
        .par_iter()
        .map(|&f| train_family(plan, data, f, keep_models))
        .collect::<Result<_>>()?;
    Ok(per_family.into_iter().flatten().collect())
}

/// National, cluster, province and stratum reports for one cell.
pub fn evaluate_cell(
    family: Family,
    column: GridColumn,
    test: &Dataset,
    regions: &RegionTable,
    truth: &[u8],
    prediction: &Prediction,
    assignment: Option<&ClusterAssignment>,
) -> Result<GridEntry> {
    let log_scores = (family.output_kind() == OutputKind::ExpenditureScore)
        .then_some(prediction.scores.as_slice());
    let rows = EvalRows {
        truth,
        pred: &prediction.labels,
        log_scores,
    };
    let meta = ReportMeta {
        model: family.as_str().to_string(),
        k: column.k(),
        pca: column.pca(),
    };
    let reports = aggregate_report(&rows, test, regions, assignment, &meta)?;
    Ok(GridEntry {
        family,
        column,
        reports,
    })
}

pub fn evaluate_grid(
    plan: &GridPlan,
    cells: &[CellResult],
    test: &Dataset,
    regions: &RegionTable,
    truth: &[u8],
    assignments: &BTreeMap<usize, ClusterAssignment>,
) -> Result<ComparisonGrid> {
    let entries = cells
        .iter()
        .map(|c| {
            let assignment = c
                .column
                .is_sml()
                .then(|| assignments.get(&c.column.k()))
                .flatten();
            evaluate_cell(
                c.family,
                c.column,
                test,
                regions,
                truth,
                &c.prediction,
                assignment,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    comparison_grid(&plan.families, &plan.columns, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_follow_k_then_pca_order() {
        let cols = grid_columns(&[4, 6], &[false, true], &[false]);
        let names: Vec<String> = cols.iter().map(ToString::to_string).collect();
        assert_eq!(
            names,
            [
                "benchmark",
                "sml_k4_nopca",
                "sml_k4_pca",
                "sml_k6_nopca",
                "sml_k6_pca"
            ]
        );
    }

    #[test]
    fn quantile_subsets_partition_regions() {
        let values = [5.0, 1.0, 3.0, 2.0, 4.0, 6.0];
        let ids: Vec<String> = (0..6).map(|i| format!("r{i}")).collect();
        let low = quantile_subset(&values, &ids, 0.0, 0.5).unwrap();
        let high = quantile_subset(&values, &ids, 0.5, 1.0).unwrap();
        assert_eq!(low, ["r1", "r2", "r3"]);
        assert_eq!(high, ["r0", "r4", "r5"]);
    }
}
