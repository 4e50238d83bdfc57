use std::collections::BTreeMap;

use log::warn;

use super::dataset::{Column, ColumnData, Dataset};
use super::regions::RegionTable;
use super::schema::{RecodeRule, VariableKind, VariableSpec};
use crate::error::{Error, Result};

/// Replaces a categorical column with one 0/1 column per category, named
/// `var=category`. With `collapse_binary`, a two-category variable becomes a
/// single column coded 1 for its second category.
pub fn one_hot_encode(ds: &Dataset, var: &str, collapse_binary: bool) -> Result<Dataset> {
    let idx = ds
        .column_index(var)
        .ok_or_else(|| Error::Schema(format!("no column '{var}'")))?;
    let col = &ds.columns[idx];
    let spec = &col.spec;
    if !matches!(spec.kind, VariableKind::Categorical | VariableKind::Binary) || !spec.is_text() {
        return Err(Error::Schema(format!(
            "'{var}' is not a categorical text column"
        )));
    }
    if spec.categories.len() < 2 {
        return Err(Error::Schema(format!(
            "'{var}' has fewer than 2 categories"
        )));
    }
    let values = match &col.data {
        ColumnData::Text(v) => v,
        ColumnData::Numeric(_) => unreachable!("text spec holds text data"),
    };

    let emitted: Vec<&String> = if collapse_binary && spec.categories.len() == 2 {
        vec![&spec.categories[1]]
    } else {
        spec.categories.iter().collect()
    };
    if let Some(clash) = emitted
        .iter()
        .map(|cat| format!("{var}={cat}"))
        .find(|n| ds.column_index(n).is_some())
    {
        return Err(Error::Schema(format!(
            "encoded column '{clash}' already exists"
        )));
    }
    let new_cols = emitted.into_iter().map(|cat| Column {
        spec: VariableSpec {
            name: format!("{var}={cat}"),
            kind: VariableKind::Binary,
            recode_rules: Vec::new(),
            categories: Vec::new(),
        },
        data: ColumnData::Numeric(
            values
                .iter()
                .map(|v| v.as_ref().map(|v| if v == cat { 1.0 } else { 0.0 }))
                .collect(),
        ),
    });

    let mut out = ds.clone();
    out.columns.splice(idx..=idx, new_cols);
    Ok(out)
}

/// Applies `rule` to a numeric column and reports how many cells changed.
pub fn winsorize_recode(ds: &Dataset, var: &str, rule: &RecodeRule) -> Result<(Dataset, usize)> {
    let idx = ds
        .column_index(var)
        .ok_or_else(|| Error::Schema(format!("no column '{var}'")))?;
    let mut out = ds.clone();
    let ColumnData::Numeric(values) = &mut out.columns[idx].data else {
        return Err(Error::Schema(format!("'{var}' is not numeric")));
    };
    let mut count = 0;
    for v in values.iter_mut().flatten() {
        if let Some(r) = rule.apply(*v) {
            if r != *v {
                count += 1;
            }
            *v = r;
        }
    }
    Ok((out, count))
}

/// Applies every recode rule declared on the schema, in schema order.
pub fn apply_schema_rules(ds: &Dataset) -> Result<(Dataset, BTreeMap<String, usize>)> {
    let mut out = ds.clone();
    let mut counts = BTreeMap::new();
    for spec in ds.schema() {
        for rule in &spec.recode_rules {
            let (next, n) = winsorize_recode(&out, &spec.name, rule)?;
            out = next;
            *counts.entry(spec.name.clone()).or_insert(0) += n;
        }
    }
    Ok((out, counts))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImputeSummary {
    pub from_region: usize,
    pub from_province: usize,
    pub from_national: usize,
}

/// Fills missing `var` cells in `target_year` with the mean of the same
/// region's observed values in earlier years. Regions without donors fall back
/// to the province mean, then the national mean, over the same years.
#[allow(clippy::needless_range_loop)]
pub fn impute_region_mean(
    ds: &Dataset,
    var: &str,
    target_year: i32,
    regions: &RegionTable,
) -> Result<(Dataset, ImputeSummary)> {
    if !ds.year.contains(&target_year) {
        return Err(Error::invalid(format!(
            "year {target_year} not present in data"
        )));
    }
    let idx = ds
        .column_index(var)
        .ok_or_else(|| Error::Schema(format!("no column '{var}'")))?;
    let values = ds.columns[idx]
        .numeric()
        .ok_or_else(|| Error::Schema(format!("'{var}' is not numeric")))?;

    #[derive(Default, Clone, Copy)]
    struct Acc(f64, usize);
    impl Acc {
        fn add(&mut self, x: f64) {
            self.0 += x;
            self.1 += 1;
        }
        fn mean(self) -> Option<f64> {
            (self.1 > 0).then(|| self.0 / self.1 as f64)
        }
    }

    let province = |r: &str| -> Result<String> {
        regions
            .province_of(r)
            .map(str::to_string)
            .ok_or_else(|| Error::invalid(format!("region '{r}' not in region table")))
    };

    let mut by_region: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut by_province: BTreeMap<String, Acc> = BTreeMap::new();
    let mut national = Acc::default();
    for i in 0..ds.len() {
        if ds.year[i] >= target_year {
            continue;
        }
        if let Some(x) = values[i] {
            by_region
                .entry(ds.region_id[i].as_str())
                .or_default()
                .add(x);
            by_province
                .entry(province(&ds.region_id[i])?)
                .or_default()
                .add(x);
            national.add(x);
        }
    }

    let mut summary = ImputeSummary::default();
    let mut filled = values.to_vec();
    for i in 0..ds.len() {
        if ds.year[i] != target_year || filled[i].is_some() {
            continue;
        }
        let r = ds.region_id[i].as_str();
        let v = if let Some(m) = by_region.get(r).and_then(|a| a.mean()) {
            summary.from_region += 1;
            m
        } else if let Some(m) = by_province.get(&province(r)?).and_then(|a| a.mean()) {
            summary.from_province += 1;
            m
        } else if let Some(m) = national.mean() {
            summary.from_national += 1;
            m
        } else {
            return Err(Error::invalid(format!(
                "no observed '{var}' before {target_year} to impute from"
            )));
        };
        filled[i] = Some(v);
    }
    if summary.from_province + summary.from_national > 0 {
        warn!(
            "imputing '{var}': {} cells used province means, {} the national mean",
            summary.from_province, summary.from_national
        );
    }
    let mut out = ds.clone();
    out.columns[idx].data = ColumnData::Numeric(filled);
    Ok((out, summary))
}
