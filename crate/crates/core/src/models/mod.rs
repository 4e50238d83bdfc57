//! The eight model families, global and per spatial cluster.

pub mod bayes;
pub mod ensemble;
pub mod linear;
pub mod logistic;
pub mod neural;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::data::{Dataset, PovertyLabels};
use crate::error::{Error, Result};
use crate::pca::{pca_fit, PcaModel, PcaRule};

pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Smallest training set any family accepts.
pub const MIN_TRAIN_ROWS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LinearRegression,
    ElasticNet,
    Logistic,
    NaiveBayes,
    GradientBoosting,
    RandomForest,
    StochasticGradient,
    NeuralNetwork,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::LinearRegression,
        Family::ElasticNet,
        Family::Logistic,
        Family::NaiveBayes,
        Family::GradientBoosting,
        Family::RandomForest,
        Family::StochasticGradient,
        Family::NeuralNetwork,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::LinearRegression => "linear_regression",
            Family::ElasticNet => "elastic_net",
            Family::Logistic => "logistic",
            Family::NaiveBayes => "naive_bayes",
            Family::GradientBoosting => "gradient_boosting",
            Family::RandomForest => "random_forest",
            Family::StochasticGradient => "stochastic_gradient",
            Family::NeuralNetwork => "neural_network",
        }
    }

    /// Regression families score log expenditure; the rest score P(poor).
    pub fn output_kind(self) -> OutputKind {
        match self {
            Family::LinearRegression | Family::ElasticNet => OutputKind::ExpenditureScore,
            _ => OutputKind::PoorProbability,
        }
    }

    pub fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            Family::LinearRegression => &[],
            Family::ElasticNet => &[
                ("alpha", 1e-3),
                ("l1_ratio", 0.5),
                ("tol", 1e-6),
                ("max_iter", 10_000.0),
            ],
            Family::Logistic => &[("l2", 1e-6), ("max_iter", 500.0), ("tol", 1e-6)],
            Family::NaiveBayes => &[("var_smoothing", 1e-9)],
            Family::GradientBoosting => &[
                ("n_trees", 100.0),
                ("max_depth", 3.0),
                ("learning_rate", 0.1),
                ("min_leaf", 1.0),
            ],
            // max_features 0 = ceil(sqrt(p)); max_depth 0 = unlimited
            Family::RandomForest => &[
                ("n_trees", 100.0),
                ("min_leaf", 5.0),
                ("max_features", 0.0),
                ("max_depth", 0.0),
            ],
            Family::StochasticGradient => &[("step", 0.01), ("epochs", 10.0), ("l2", 0.0)],
            Family::NeuralNetwork => &[
                ("hidden", 32.0),
                ("epochs", 30.0),
                ("batch_size", 128.0),
                ("learning_rate", 0.01),
                ("l2", 0.0),
            ],
        }
    }

    fn integer_params(self) -> &'static [&'static str] {
        &[
            "max_iter",
            "n_trees",
            "max_depth",
            "max_features",
            "epochs",
            "hidden",
            "batch_size",
        ]
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    ExpenditureScore,
    PoorProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub use_lagged_features: bool,
    #[serde(default)]
    pub pca: Option<PcaRule>,
}

impl ModelSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        Self {
            family,
            hyperparameters: BTreeMap::new(),
            seed,
            use_lagged_features: false,
            pca: None,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.hyperparameters.insert(name.to_string(), value);
        self
    }

    /// Defaults overlaid with overrides; unknown names and bad values are errors.
    pub fn resolved_hyperparameters(&self) -> Result<BTreeMap<String, f64>> {
        let mut out: BTreeMap<String, f64> = self
            .family
            .defaults()
            .iter()
            .map(|&(k, v)| (k.to_string(), v))
            .collect();
        for (k, &v) in &self.hyperparameters {
            if !out.contains_key(k) {
                return Err(Error::invalid(format!(
                    "unknown hyperparameter '{k}' for {}",
                    self.family
                )));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "hyperparameter {k} = {v} must be finite and non-negative"
                )));
            }
            if self.family.integer_params().contains(&k.as_str()) && v.fract() != 0.0 {
                return Err(Error::invalid(format!(
                    "hyperparameter {k} = {v} must be an integer"
                )));
            }
            out.insert(k.clone(), v);
        }
        if out.get("l1_ratio").is_some_and(|&v| v > 1.0) {
            return Err(Error::invalid("l1_ratio must lie in [0, 1]"));
        }
        for key in ["hidden", "batch_size", "max_iter"] {
            if out.get(key) == Some(&0.0) {
                return Err(Error::invalid(format!("{key} must be positive")));
            }
        }
        Ok(out)
    }

    /// Feature columns the model consumes, including spatial lags when enabled.
    pub fn feature_columns(&self, features: &[String]) -> Vec<String> {
        let mut cols = features.to_vec();
        if self.use_lagged_features {
            cols.extend(features.iter().map(|f| format!("lag_{f}")));
        }
        cols
    }
}

/// Column z-scoring; constant columns keep scale one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let means: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
        let scales = (0..x.ncols())
            .map(|j| {
                let var = x
                    .column(j)
                    .iter()
                    .map(|v| (v - means[j]).powi(2))
                    .sum::<f64>()
                    / (n - 1.0).max(1.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { means, scales }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.scales[j]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaStage {
    pub rule: PcaRule,
    pub n_components: usize,
    pub model: PcaModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Params {
    Linear(linear::LinearParams),
    Logistic(logistic::LogisticParams),
    NaiveBayes(bayes::NaiveBayesParams),
    Boosting(ensemble::BoostingParams),
    Forest(ensemble::ForestParams),
    Mlp(neural::MlpParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub family: Family,
    pub hyperparameters: BTreeMap<String, f64>,
    pub seed: u64,
    pub output_kind: OutputKind,
    /// Poverty line in expenditure units.
    pub threshold_value: f64,
    pub n_features: usize,
    pub n_train: usize,
    pub pca: Option<PcaStage>,
    pub standardizer: Standardizer,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prediction {
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
}

fn check_inputs(x: &DMatrix<f64>, n_labels: usize, n_y: usize) -> Result<()> {
    if x.nrows() != n_labels || x.nrows() != n_y {
        return Err(Error::invalid(format!(
            "{} feature rows, {} targets, {} labels",
            x.nrows(),
            n_y,
            n_labels
        )));
    }
    if let Some(k) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite feature at row {}, column {}",
            k % x.nrows().max(1),
            k / x.nrows().max(1)
        )));
    }
    Ok(())
}

/// Trains one model. `y_log` is log expenditure; `labels` carries the binary
/// target and the poverty line.
pub fn fit(
    spec: &ModelSpec,
    x: &DMatrix<f64>,
    y_log: &[f64],
    labels: &PovertyLabels,
) -> Result<TrainedModel> {
    check_inputs(x, labels.len(), y_log.len())?;
    let n = x.nrows();
    if n < MIN_TRAIN_ROWS {
        return Err(Error::TooFewRows {
            n,
            min: MIN_TRAIN_ROWS,
        });
    }
    let kind = spec.family.output_kind();
    let y = &labels.labels;
    if kind == OutputKind::PoorProbability {
        let poor = y.iter().filter(|&&v| v == 1).count();
        if poor == 0 || poor == n {
            return Err(Error::SingleClass { class: y[0], n });
        }
    }
    let hp = spec.resolved_hyperparameters()?;
    let h = |k: &str| hp[k];
    let hu = |k: &str| hp[k] as usize;

    let (features, pca) = match spec.pca {
        Some(rule) => {
            let model = pca_fit(x, true)?;
            let m = model.select(rule)?.min(model.n_components());
            let z = model.transform(x, m)?;
            (
                z,
                Some(PcaStage {
                    rule,
                    n_components: m,
                    model,
                }),
            )
        }
        None => (x.clone(), None),
    };
    let standardizer = Standardizer::fit(&features);
    let z = standardizer.apply(&features);
    let p = z.ncols();

    let params = match spec.family {
        Family::LinearRegression => Params::Linear(linear::fit_ols(&z, y_log)?),
        Family::ElasticNet => Params::Linear(linear::fit_elastic_net(
            &z,
            y_log,
            &linear::ElasticNetConfig {
                alpha: h("alpha"),
                l1_ratio: h("l1_ratio"),
                tol: h("tol"),
                max_iter: hu("max_iter"),
            },
        )?),
        Family::Logistic => Params::Logistic(logistic::fit_logistic(
            &z,
            y,
            &logistic::LogisticConfig {
                l2: h("l2"),
                max_iter: hu("max_iter"),
                tol: h("tol"),
            },
        )),
        Family::NaiveBayes => Params::NaiveBayes(bayes::fit_naive_bayes(&z, y, h("var_smoothing"))),
        Family::GradientBoosting => Params::Boosting(ensemble::fit_boosting(
            &z,
            y,
            &ensemble::BoostingConfig {
                n_trees: hu("n_trees"),
                max_depth: hu("max_depth"),
                learning_rate: h("learning_rate"),
                min_leaf: h("min_leaf").max(1.0),
            },
        )),
        Family::RandomForest => {
            let mf = match hu("max_features") {
                0 => (p as f64).sqrt().ceil() as usize,
                m => m,
            };
            Params::Forest(ensemble::fit_forest(
                &z,
                y,
                &ensemble::ForestConfig {
                    n_trees: hu("n_trees").max(1),
                    min_leaf: h("min_leaf").max(1.0),
                    max_features: mf.clamp(1, p.max(1)),
                    max_depth: match hu("max_depth") {
                        0 => None,
                        d => Some(d),
                    },
                },
                spec.seed,
            ))
        }
        Family::StochasticGradient => Params::Logistic(logistic::fit_sgd(
            &z,
            y,
            &logistic::SgdConfig {
                step: h("step"),
                epochs: hu("epochs"),
                l2: h("l2"),
            },
            spec.seed,
        )),
        Family::NeuralNetwork => Params::Mlp(
            neural::fit_mlp(
                &z,
                y,
                &neural::MlpConfig {
                    hidden: hu("hidden"),
                    epochs: hu("epochs"),
                    batch_size: hu("batch_size"),
                    learning_rate: h("learning_rate"),
                    l2: h("l2"),
                },
                spec.seed,
            )
            .0,
        ),
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        family: spec.family,
        hyperparameters: hp,
        seed: spec.seed,
        output_kind: kind,
        threshold_value: labels.threshold_value,
        n_features: x.ncols(),
        n_train: n,
        pca,
        standardizer,
        params,
    })
}

impl TrainedModel {
    fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::invalid(format!(
                "model expects {} feature columns, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let f = match &self.pca {
            Some(stage) if x.nrows() > 0 => stage.model.transform(x, stage.n_components)?,
            Some(stage) => DMatrix::zeros(0, stage.n_components),
            None => x.clone(),
        };
        Ok(self.standardizer.apply(&f))
    }

    /// Raw scores: predicted log expenditure or P(poor).
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let z = self.transform(x)?;
        let row = |i: usize| z.row(i).iter().copied().collect::<Vec<f64>>();
        Ok(match &self.params {
            Params::Linear(p) => (0..z.nrows()).map(|i| p.predict_row(&row(i))).collect(),
            Params::Logistic(p) => p.predict_proba(&z),
            Params::NaiveBayes(p) => (0..z.nrows())
                .map(|i| p.predict_proba_row(&row(i)))
                .collect(),
            Params::Boosting(p) => p.predict_proba(&z),
            Params::Forest(p) => p.predict_proba(&z),
            Params::Mlp(p) => p.predict_proba(&z),
        })
    }

    pub fn label_for(&self, score: f64) -> u8 {
        match self.output_kind {
            OutputKind::ExpenditureScore => u8::from(score <= self.threshold_value.ln()),
            OutputKind::PoorProbability => u8::from(score >= 0.5),
        }
    }

    /// Linear-family coefficients in the original feature units (no PCA stage).
    pub fn linear_coefficients(&self) -> Option<linear::LinearParams> {
        let Params::Linear(p) = &self.params else {
            return None;
        };
        if self.pca.is_some() {
            return None;
        }
        let s = &self.standardizer;
        let coefficients: Vec<f64> = p
            .coefficients
            .iter()
            .zip(&s.scales)
            .map(|(b, sc)| b / sc)
            .collect();
        let intercept = p.intercept
            - coefficients
                .iter()
                .zip(&s.means)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        Some(linear::LinearParams {
            intercept,
            coefficients,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(text)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }
}

pub fn predict(model: &TrainedModel, x: &DMatrix<f64>) -> Result<Prediction> {
    let scores = model.scores(x)?;
    let labels = scores.iter().map(|&s| model.label_for(s)).collect();
    Ok(Prediction { labels, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModelSet {
    pub format_version: u32,
    pub features: Vec<String>,
    pub assignment: ClusterAssignment,
    pub models: BTreeMap<usize, TrainedModel>,
    pub fallback: TrainedModel,
    /// Clusters served by the fallback, with the reason.
    pub fallback_clusters: BTreeMap<usize, String>,
}

impl ClusterModelSet {
    pub fn model_for(&self, label: usize) -> &TrainedModel {
        self.models.get(&label).unwrap_or(&self.fallback)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: ClusterModelSet = serde_json::from_str(text)?;
        if s.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model format version {}",
                s.format_version
            )));
        }
        Ok(s)
    }
}

fn row_clusters(ds: &Dataset, assignment: &ClusterAssignment) -> Result<Vec<usize>> {
    let lookup = assignment.lookup();
    ds.region_id
        .iter()
        .map(|r| {
            lookup
                .get(r.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("region '{r}' has no cluster label")))
        })
        .collect()
}

/// Fits one model per cluster on that cluster's rows, seeded with
/// `seed + label - 1`. A global model on all rows serves clusters that are too
/// small or single-class; pass `global` to reuse an already trained one.
pub fn fit_per_cluster(
    spec: &ModelSpec,
    train: &Dataset,
    labels: &PovertyLabels,
    features: &[String],
    assignment: &ClusterAssignment,
    global: Option<TrainedModel>,
) -> Result<ClusterModelSet> {
    let cols = spec.feature_columns(features);
    let x = train.feature_matrix(&cols)?;
    let y = train.log_pce();
    let clusters = row_clusters(train, assignment)?;
    let fallback = match global {
        Some(m) if m.n_features == cols.len() && m.family == spec.family => m,
        Some(_) => {
            return Err(Error::invalid(
                "global model does not match the cluster feature layout",
            ))
        }
        None => fit(spec, &x, &y, labels)?,
    };
    let results: Vec<(usize, Result<TrainedModel>)> = (1..=assignment.k)
        .into_par_iter()
        .map(|label| {
            let rows: Vec<usize> = (0..train.len()).filter(|&i| clusters[i] == label).collect();
            if rows.is_empty() {
                return (
                    label,
                    Err(Error::TooFewRows {
                        n: 0,
                        min: MIN_TRAIN_ROWS,
                    }),
                );
            }
            let spec_k = ModelSpec {
                seed: spec.seed.wrapping_add(label as u64 - 1),
                ..spec.clone()
            };
            if rows.len() == train.len()
                && spec_k.seed == fallback.seed
                && fallback.n_train == train.len()
            {
                return (label, Ok(fallback.clone()));
            }
            let xk = x.select_rows(&rows);
            let yk: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
            (label, fit(&spec_k, &xk, &yk, &labels.select(&rows)))
        })
        .collect();
    let mut models = BTreeMap::new();
    let mut fallback_clusters = BTreeMap::new();
    for (label, r) in results {
        match r {
            Ok(m) => {
                models.insert(label, m);
            }
            Err(e) if e.is_fallback() => {
                log::info!("cluster {label} uses the global model: {e}");
                fallback_clusters.insert(label, e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ClusterModelSet {
        format_version: MODEL_FORMAT_VERSION,
        features: cols,
        assignment: assignment.clone(),
        models,
        fallback,
        fallback_clusters,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnionPrediction {
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
    pub clusters: Vec<usize>,
}

/// Each row predicted once by its cluster's model, in row order.
pub fn predict_union(set: &ClusterModelSet, test: &Dataset) -> Result<UnionPrediction> {
    let x = test.feature_matrix(&set.features)?;
    let clusters = row_clusters(test, &set.assignment)?;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in clusters.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let mut out = UnionPrediction {
        labels: vec![0; test.len()],
        scores: vec![0.0; test.len()],
        clusters,
    };
    for (label, rows) in groups {
        let p = predict(set.model_for(label), &x.select_rows(&rows))?;
        for (k, &i) in rows.iter().enumerate() {
            out.labels[i] = p.labels[k];
            out.scores[i] = p.scores[k];
        }
    }
    Ok(out)
}

/// Prediction table: household_id, region_id, truth, label, score, log_pce, cluster.
pub fn write_predictions<W: Write>(
    writer: W,
    ds: &Dataset,
    truth: &[u8],
    pred: &Prediction,
    clusters: Option<&[usize]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "household_id",
        "region_id",
        "truth",
        "label",
        "score",
        "log_pce",
        "cluster",
    ])?;
    for i in 0..ds.len() {
        w.write_record([
            ds.household_id[i].clone(),
            ds.region_id[i].clone(),
            truth[i].to_string(),
            pred.labels[i].to_string(),
            pred.scores[i].to_string(),
            ds.pce[i].ln().to_string(),
            clusters.map_or_else(|| "1".to_string(), |c| c[i].to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<predictions csv>", e))?;
    Ok(())
}
