use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::report::{fmt_metric, macro_average, Scope, TargetingReport};
use crate::error::{Error, Result};
use crate::models::Family;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridColumn {
    Benchmark,
    Sml { k: usize, pca: bool, lagged: bool },
}

impl GridColumn {
    pub fn k(&self) -> usize {
        match self {
            GridColumn::Benchmark => 0,
            GridColumn::Sml { k, .. } => *k,
        }
    }

    pub fn pca(&self) -> bool {
        matches!(self, GridColumn::Sml { pca: true, .. })
    }

    pub fn lagged(&self) -> bool {
        matches!(self, GridColumn::Sml { lagged: true, .. })
    }

    pub fn is_sml(&self) -> bool {
        matches!(self, GridColumn::Sml { .. })
    }
}

impl fmt::Display for GridColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridColumn::Benchmark => f.write_str("benchmark"),
            GridColumn::Sml { k, pca, lagged } => {
                write!(f, "sml_k{k}_{}", if *pca { "pca" } else { "nopca" })?;
                if *lagged {
                    f.write_str("_lag")?;
                }
                Ok(())
            }
        }
    }
}

/// All reports produced by one (family, column) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub family: Family,
    pub column: GridColumn,
    pub reports: Vec<TargetingReport>,
}

impl GridEntry {
    pub fn national(&self) -> Option<&TargetingReport> {
        self.reports.iter().find(|r| r.scope == Scope::National)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonGrid {
    pub families: Vec<Family>,
    pub columns: Vec<GridColumn>,
    cells: BTreeMap<(Family, GridColumn), GridEntry>,
}

/// A scored cell: family, column and its pooled EE.
pub type Cell = (Family, GridColumn, f64);

/// Checks that every (family, column) pair has exactly one entry with a
/// national report.
pub fn comparison_grid(
    families: &[Family],
    columns: &[GridColumn],
    entries: Vec<GridEntry>,
) -> Result<ComparisonGrid> {
    let mut cells = BTreeMap::new();
    for e in entries {
        if e.national().is_none() {
            return Err(Error::invalid(format!(
                "cell {}/{} has no national report",
                e.family, e.column
            )));
        }
        let key = (e.family, e.column);
        if cells.insert(key, e).is_some() {
            return Err(Error::invalid(format!(
                "duplicate grid cell {}/{}",
                key.0, key.1
            )));
        }
    }
    let missing: Vec<String> = families
        .iter()
        .flat_map(|&f| columns.iter().map(move |&c| (f, c)))
        .filter(|k| !cells.contains_key(k))
        .map(|(f, c)| format!("{f}/{c}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "grid is missing cells: {}",
            missing.join(", ")
        )));
    }
    Ok(ComparisonGrid {
        families: families.to_vec(),
        columns: columns.to_vec(),
        cells,
    })
}

impl ComparisonGrid {
    pub fn entry(&self, family: Family, column: GridColumn) -> &GridEntry {
        &self.cells[&(family, column)]
    }

    pub fn national(&self, family: Family, column: GridColumn) -> &TargetingReport {
        self.entry(family, column)
            .national()
            .expect("checked at construction")
    }

    /// Lowest defined EE in a column; ties go to the earlier family.
    pub fn column_minimum(&self, column: GridColumn) -> Option<(Family, f64)> {
        let mut best: Option<(Family, f64)> = None;
        for &f in &self.families {
            if let Some(ee) = self.national(f, column).ee {
                if best.is_none_or(|(_, b)| ee < b) {
                    best = Some((f, ee));
                }
            }
        }
        best
    }

    fn column_minimum_ie(&self, column: GridColumn) -> Option<f64> {
        self.families
            .iter()
            .filter_map(|&f| self.national(f, column).ie)
            .reduce(f64::min)
    }

    /// Lowest-EE cell among columns accepted by `keep`.
    pub fn best_cell(&self, keep: impl Fn(&GridColumn) -> bool) -> Option<Cell> {
        let mut best: Option<Cell> = None;
        for &c in self.columns.iter().filter(|c| keep(c)) {
            if let Some((f, ee)) = self.column_minimum(c) {
                if best.is_none_or(|(_, _, b)| ee < b) {
                    best = Some((f, c, ee));
                }
            }
        }
        best
    }

    pub fn best_benchmark(&self) -> Option<Cell> {
        self.best_cell(|c| !c.is_sml())
    }

    pub fn best_sml(&self) -> Option<Cell> {
        self.best_cell(GridColumn::is_sml)
    }

    /// Wide table: one row per family, EE and IE per column, then a minimum row.
    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["family".to_string()];
        for c in &self.columns {
            header.push(format!("{c}_ee"));
            header.push(format!("{c}_ie"));
        }
        w.write_record(&header)?;
        for &f in &self.families {
            let mut row = vec![f.to_string()];
            for &c in &self.columns {
                let r = self.national(f, c);
                row.push(fmt_metric(r.ee));
                row.push(fmt_metric(r.ie));
            }
            w.write_record(&row)?;
        }
        let mut row = vec!["minimum".to_string()];
        for &c in &self.columns {
            row.push(fmt_metric(self.column_minimum(c).map(|(_, ee)| ee)));
            row.push(fmt_metric(self.column_minimum_ie(c)));
        }
        w.write_record(&row)?;
        w.flush().map_err(|e| Error::io("<grid csv>", e))?;
        Ok(())
    }

    /// Every report of every cell, one row each.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "family",
            "column",
            "k",
            "pca",
            "lagged",
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
        ])?;
        for &f in &self.families {
            for &c in &self.columns {
                for r in &self.entry(f, c).reports {
                    w.write_record([
                        f.to_string(),
                        c.to_string(),
                        c.k().to_string(),
                        c.pca().to_string(),
                        c.lagged().to_string(),
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
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<grid csv>", e))?;
        Ok(())
    }

    /// Pooled (micro) versus province-mean (macro) EE and IE per cell.
    pub fn write_macro_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "family",
            "column",
            "micro_ee",
            "micro_ie",
            "macro_province_ee",
            "macro_province_ie",
        ])?;
        for &f in &self.families {
            for &c in &self.columns {
                let e = self.entry(f, c);
                let nat = self.national(f, c);
                let (mee, mie) = macro_average(&e.reports, |s| matches!(s, Scope::Province(_)));
                w.write_record([
                    f.to_string(),
                    c.to_string(),
                    fmt_metric(nat.ee),
                    fmt_metric(nat.ie),
                    fmt_metric(mee),
                    fmt_metric(mie),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<grid csv>", e))?;
        Ok(())
    }
}
