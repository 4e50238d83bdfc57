use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{
    confusion, exclusion_error, inclusion_error, r_squared, secondary_metrics, ConfusionCounts,
};
use crate::cluster::ClusterAssignment;
use crate::data::{Dataset, RegionTable};
use crate::error::{Error, Result};

/// Marker written wherever a metric is undefined.
pub const NA: &str = "NA";

pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    National,
    Cluster(usize),
    Province(String),
    Stratum { province: String, urban: bool },
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::National => f.write_str("national"),
            Scope::Cluster(k) => write!(f, "cluster:{k}"),
            Scope::Province(p) => write!(f, "province:{p}"),
            Scope::Stratum { province, urban } => {
                write!(
                    f,
                    "province:{province}:{}",
                    if *urban { "urban" } else { "rural" }
                )
            }
        }
    }
}

/// Identifies the grid cell a report belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    /// Cluster count; 0 for the global benchmark.
    pub k: usize,
    pub pca: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingReport {
    pub scope: Scope,
    pub counts: ConfusionCounts,
    pub ee: Option<f64>,
    pub ie: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub r2: Option<f64>,
    #[serde(flatten)]
    pub meta: ReportMeta,
}

impl TargetingReport {
    pub fn from_counts(
        scope: Scope,
        counts: ConfusionCounts,
        r2: Option<f64>,
        meta: ReportMeta,
    ) -> Self {
        let s = secondary_metrics(&counts, None).expect("no scores, no failure");
        Self {
            scope,
            ee: exclusion_error(&counts).ok(),
            ie: inclusion_error(&counts).ok(),
            sensitivity: s.sensitivity,
            specificity: s.specificity,
            r2,
            counts,
            meta,
        }
    }
}

/// Rows to evaluate: truth and predicted labels, plus model scores on the log
/// expenditure scale when the family is a regression.
pub struct EvalRows<'a> {
    pub truth: &'a [u8],
    pub pred: &'a [u8],
    pub log_scores: Option<&'a [f64]>,
}

/// National, per-cluster, per-province and per province × urban/rural reports.
pub fn aggregate_report(
    rows: &EvalRows<'_>,
    ds: &Dataset,
    regions: &RegionTable,
    assignment: Option<&ClusterAssignment>,
    meta: &ReportMeta,
) -> Result<Vec<TargetingReport>> {
    let n = ds.len();
    if rows.truth.len() != n
        || rows.pred.len() != n
        || rows.log_scores.is_some_and(|s| s.len() != n)
    {
        return Err(Error::invalid(
            "evaluation vectors do not match the dataset rows",
        ));
    }
    let log_pce = ds.log_pce();
    let lookup = assignment.map(ClusterAssignment::lookup);
    let mut groups: BTreeMap<Scope, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = &ds.region_id[i];
        let idx = regions
            .index_of(r)
            .ok_or_else(|| Error::invalid(format!("region '{r}' missing from the region table")))?;
        let region = regions.get(idx);
        groups.entry(Scope::National).or_default().push(i);
        if let Some(l) = &lookup {
            let c = l
                .get(r.as_str())
                .ok_or_else(|| Error::invalid(format!("region '{r}' has no cluster label")))?;
            groups.entry(Scope::Cluster(*c)).or_default().push(i);
        }
        groups
            .entry(Scope::Province(region.province_id.clone()))
            .or_default()
            .push(i);
        groups
            .entry(Scope::Stratum {
                province: region.province_id.clone(),
                urban: region.urban_flag,
            })
            .or_default()
            .push(i);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (scope, idx) in groups {
        let t: Vec<u8> = idx.iter().map(|&i| rows.truth[i]).collect();
        let p: Vec<u8> = idx.iter().map(|&i| rows.pred[i]).collect();
        let counts = confusion(&t, &p)?;
        let r2 = rows.log_scores.and_then(|s| {
            let a: Vec<f64> = idx.iter().map(|&i| log_pce[i]).collect();
            let b: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            r_squared(&a, &b).ok()
        });
        out.push(TargetingReport::from_counts(
            scope,
            counts,
            r2,
            meta.clone(),
        ));
    }
    Ok(out)
}

/// Unweighted mean of the defined EE and IE values over reports matching `keep`.
pub fn macro_average(
    reports: &[TargetingReport],
    keep: impl Fn(&Scope) -> bool,
) -> (Option<f64>, Option<f64>) {
    let mean =
        |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let sel: Vec<&TargetingReport> = reports.iter().filter(|r| keep(&r.scope)).collect();
    (
        mean(sel.iter().filter_map(|r| r.ee).collect()),
        mean(sel.iter().filter_map(|r| r.ie).collect()),
    )
}

pub const REPORT_HEADER: [&str; 13] = [
    "model",
    "k",
    "pca",
    "scope",
    "tp",
    "fn",
    "fp",
    "tn",
    "ee",
    "ie",
    "sensitivity",
    "specificity",
    "r2",
];

pub(crate) fn report_record(r: &TargetingReport) -> Vec<String> {
    vec![
        r.meta.model.clone(),
        r.meta.k.to_string(),
        r.meta.pca.to_string(),
        r.scope.to_string(),
        r.counts.tp.to_string(),
        r.counts.fn_.to_string(),
        r.counts.fp.to_string(),
        r.counts.tn.to_string(),
        fmt_metric(r.ee),
        fmt_metric(r.ie),
        fmt_metric(r.sensitivity),
        fmt_metric(r.specificity),
        fmt_metric(r.r2),
    ]
}

pub fn write_reports_csv<W: Write>(writer: W, reports: &[TargetingReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        w.write_record(report_record(r))?;
    }
    w.flush().map_err(|e| Error::io("<report csv>", e))?;
    Ok(())
}
