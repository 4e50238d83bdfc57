use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::regions::RegionTable;
use super::schema::{VariableKind, VariableSpec};
use crate::error::{Error, Result};

/// The four columns every household file carries before the schema columns.
pub const KEY_COLUMNS: [&str; 4] = ["household_id", "region_id", "year", "pce"];

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    fn select(&self, idx: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Text(v) => ColumnData::Text(idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }

    fn cell(&self, i: usize) -> String {
        match self {
            ColumnData::Numeric(v) => v[i].map(|x| x.to_string()).unwrap_or_default(),
            ColumnData::Text(v) => v[i].clone().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub spec: VariableSpec,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(&self) -> Option<&[Option<f64>]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Text(_) => None,
        }
    }
}

/// Household rows stored by column. Missing cells are `None`, never zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub household_id: Vec<String>,
    pub region_id: Vec<String>,
    pub year: Vec<i32>,
    pub pce: Vec<f64>,
    pub columns: Vec<Column>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        household_id: Vec<String>,
        region_id: Vec<String>,
        year: Vec<i32>,
        pce: Vec<f64>,
        columns: Vec<Column>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = household_id.len();
        if region_id.len() != n
            || year.len() != n
            || pce.len() != n
            || columns.iter().any(|c| c.data.len() != n)
        {
            return Err(Error::invalid("dataset columns have unequal lengths"));
        }
        if let Some(i) = pce.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::invalid(format!(
                "non-positive expenditure {} for household '{}'",
                pce[i], household_id[i]
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for i in 0..n {
            if !seen.insert((household_id[i].as_str(), year[i])) {
                return Err(Error::invalid(format!(
                    "duplicate household '{}' in year {}",
                    household_id[i], year[i]
                )));
            }
        }
        let mut names = HashSet::new();
        for c in &columns {
            c.spec.validate()?;
            if !names.insert(c.spec.name.as_str()) || KEY_COLUMNS.contains(&c.spec.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column '{}'", c.spec.name)));
            }
        }
        Ok(Self {
            household_id,
            region_id,
            year,
            pce,
            columns,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.household_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.household_id.is_empty()
    }

    pub fn schema(&self) -> Vec<VariableSpec> {
        self.columns.iter().map(|c| c.spec.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.spec.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.column_index(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::Schema(format!("no column '{name}'")))
    }

    /// Names of every numeric column, in schema order.
    pub fn numeric_feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| matches!(c.data, ColumnData::Numeric(_)))
            .map(|c| c.spec.name.clone())
            .collect()
    }

    pub fn log_pce(&self) -> Vec<f64> {
        self.pce.iter().map(|p| p.ln()).collect()
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            household_id: idx.iter().map(|&i| self.household_id[i].clone()).collect(),
            region_id: idx.iter().map(|&i| self.region_id[i].clone()).collect(),
            year: idx.iter().map(|&i| self.year[i]).collect(),
            pce: idx.iter().map(|&i| self.pce[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    spec: c.spec.clone(),
                    data: c.data.select(idx),
                })
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Dense `n × names.len()` matrix; any missing or non-finite cell is an error.
    pub fn feature_matrix(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let cols: Vec<&[Option<f64>]> = names
            .iter()
            .map(|n| {
                self.column(n)?.numeric().ok_or_else(|| {
                    Error::Schema(format!("column '{n}' is not numeric; encode it first"))
                })
            })
            .collect::<Result<_>>()?;
        let n = self.len();
        let mut m = DMatrix::zeros(n, names.len());
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                match v {
                    Some(x) if x.is_finite() => m[(i, j)] = *x,
                    Some(x) => {
                        return Err(Error::invalid(format!(
                            "non-finite value {x} in '{}' row {}",
                            names[j], self.household_id[i]
                        )))
                    }
                    None => {
                        return Err(Error::invalid(format!(
                            "missing value in '{}' for household '{}'",
                            names[j], self.household_id[i]
                        )))
                    }
                }
            }
        }
        Ok(m)
    }

    /// Every household's region must exist in `regions`.
    pub fn check_regions(&self, regions: &RegionTable) -> Result<()> {
        match self
            .region_id
            .iter()
            .position(|r| regions.index_of(r).is_none())
        {
            Some(i) => Err(Error::invalid(format!(
                "household '{}' references unknown region '{}'",
                self.household_id[i], self.region_id[i]
            ))),
            None => Ok(()),
        }
    }

    /// Rows of `other` appended after `self`; schemas must match exactly.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema() != other.schema() {
            return Err(Error::Schema(
                "cannot concatenate datasets with different schemas".into(),
            ));
        }
        let mut out = self.clone();
        out.household_id.extend(other.household_id.iter().cloned());
        out.region_id.extend(other.region_id.iter().cloned());
        out.year.extend(&other.year);
        out.pce.extend(&other.pce);
        for (c, o) in out.columns.iter_mut().zip(&other.columns) {
            match (&mut c.data, &o.data) {
                (ColumnData::Numeric(a), ColumnData::Numeric(b)) => a.extend(b),
                (ColumnData::Text(a), ColumnData::Text(b)) => a.extend(b.iter().cloned()),
                _ => unreachable!("schemas compared equal"),
            }
        }
        Dataset::new(
            out.household_id,
            out.region_id,
            out.year,
            out.pce,
            out.columns,
            out.provenance,
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.write_csv_with(writer, &[])
    }

    /// Writes the household CSV, with optional extra columns appended after the schema columns.
    pub fn write_csv_with<W: Write>(&self, writer: W, extra: &[(&str, Vec<String>)]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = KEY_COLUMNS.to_vec();
        header.extend(self.columns.iter().map(|c| c.spec.name.as_str()));
        header.extend(extra.iter().map(|(n, _)| *n));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.household_id[i].clone(),
                self.region_id[i].clone(),
                self.year[i].to_string(),
                self.pce[i].to_string(),
            ];
            rec.extend(self.columns.iter().map(|c| c.data.cell(i)));
            rec.extend(extra.iter().map(|(_, v)| v[i].clone()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Reads a household CSV whose non-key columns are exactly the `schema` variables.
pub fn load_households(path: impl AsRef<Path>, schema: &[VariableSpec]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_households(file, schema, &path.display().to_string())
}

pub fn read_households<R: Read>(
    reader: R,
    schema: &[VariableSpec],
    source: &str,
) -> Result<Dataset> {
    for v in schema {
        v.validate()?;
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(source, e))?.clone();
    let key_pos: Vec<usize> = KEY_COLUMNS
        .iter()
        .map(|k| {
            headers
                .iter()
                .position(|h| h == *k)
                .ok_or_else(|| Error::Schema(format!("{source}: missing required column '{k}'")))
        })
        .collect::<Result<_>>()?;
    let mut var_pos = Vec::with_capacity(schema.len());
    for v in schema {
        let p = headers.iter().position(|h| h == v.name).ok_or_else(|| {
            Error::Schema(format!("{source}: missing schema column '{}'", v.name))
        })?;
        var_pos.push(p);
    }
    for h in headers.iter() {
        if !KEY_COLUMNS.contains(&h) && !schema.iter().any(|v| v.name == h) {
            return Err(Error::Schema(format!("{source}: unknown column '{h}'")));
        }
    }

    let mut hh = Vec::new();
    let mut reg = Vec::new();
    let mut year = Vec::new();
    let mut pce = Vec::new();
    let mut data: Vec<ColumnData> = schema
        .iter()
        .map(|v| {
            if v.is_text() {
                ColumnData::Text(Vec::new())
            } else {
                ColumnData::Numeric(Vec::new())
            }
        })
        .collect();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(source, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let get = |p: usize| rec.get(p).unwrap_or("");
        let id = get(key_pos[0]);
        if id.is_empty() {
            return Err(perr("empty household_id".into()));
        }
        let y: i32 = get(key_pos[2])
            .parse()
            .map_err(|_| perr(format!("bad year '{}'", get(key_pos[2]))))?;
        let p: f64 = get(key_pos[3])
            .parse()
            .map_err(|_| perr(format!("bad pce '{}'", get(key_pos[3]))))?;
        if !(p > 0.0 && p.is_finite()) {
            return Err(perr(format!("non-positive expenditure {p}")));
        }
        hh.push(id.to_string());
        reg.push(get(key_pos[1]).to_string());
        year.push(y);
        pce.push(p);
        for ((v, &pos), col) in schema.iter().zip(&var_pos).zip(data.iter_mut()) {
            let cell = get(pos);
            match col {
                ColumnData::Text(vals) => {
                    if cell.is_empty() {
                        vals.push(None);
                    } else if !v.categories.iter().any(|c| c == cell) {
                        return Err(perr(format!("unknown category '{cell}' for '{}'", v.name)));
                    } else {
                        vals.push(Some(cell.to_string()));
                    }
                }
                ColumnData::Numeric(vals) => {
                    if cell.is_empty() {
                        vals.push(None);
                    } else {
                        let x: f64 = cell
                            .parse()
                            .map_err(|_| perr(format!("bad number '{cell}' for '{}'", v.name)))?;
                        if v.kind == VariableKind::Binary && x != 0.0 && x != 1.0 {
                            return Err(perr(format!("binary column '{}' holds {x}", v.name)));
                        }
                        vals.push(Some(x));
                    }
                }
            }
        }
    }

    let columns = schema
        .iter()
        .cloned()
        .zip(data)
        .map(|(spec, data)| Column { spec, data })
        .collect();
    Dataset::new(hh, reg, year, pce, columns, format!("loaded from {source}"))
}

fn csv_err(source: &str, e: csv::Error) -> Error {
    Error::Parse {
        path: source.to_string(),
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<VariableSpec> {
        vec![VariableSpec::continuous("hhsize")]
    }

    #[test]
    fn three_rows_parse() {
        let text = "household_id,region_id,year,pce,hhsize\nh1,A,2020,100,3\nh2,A,2020,250.5,4\nh3,B,2019,80,2\n";
        let ds = read_households(text.as_bytes(), &schema(), "t").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.pce, vec![100.0, 250.5, 80.0]);
        assert_eq!(ds.year, vec![2020, 2020, 2019]);
    }

    #[test]
    fn empty_cell_is_missing_not_zero() {
        let text = "household_id,region_id,year,pce,hhsize\nh1,A,2020,100,\n";
        let ds = read_households(text.as_bytes(), &schema(), "t").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.columns[0].numeric().unwrap()[0], None);
    }

    #[test]
    fn negative_pce_reports_line() {
        let text = "household_id,region_id,year,pce,hhsize\nh1,A,2020,100,1\nh2,A,2020,-5,1\n";
        match read_households(text.as_bytes(), &schema(), "t") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("non-positive expenditure"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "household_id,region_id,year,pce,hhsize\nh1,A,2020,100,1\nh2,A,20x0,5,1\n";
        assert!(matches!(
            read_households(text.as_bytes(), &schema(), "t"),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn unknown_column_is_rejected() {
        let text = "household_id,region_id,year,pce,hhsize,mystery\nh1,A,2020,100,1,2\n";
        assert!(matches!(
            read_households(text.as_bytes(), &schema(), "t"),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn duplicate_household_within_year_is_rejected() {
        let text = "household_id,region_id,year,pce,hhsize\nh1,A,2020,100,1\nh1,A,2020,90,1\n";
        assert!(read_households(text.as_bytes(), &schema(), "t").is_err());
        let ok = "household_id,region_id,year,pce,hhsize\nh1,A,2020,100,1\nh1,A,2021,90,1\n";
        assert!(read_households(ok.as_bytes(), &schema(), "t").is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let schema = vec![
            VariableSpec::continuous("hhsize"),
            VariableSpec::categorical("sector", ["agriculture", "industry", "services"]),
        ];
        let text = "household_id,region_id,year,pce,hhsize,sector\nh1,A,2020,100,3,industry\nh2,B,2020,7.25,,\n";
        let ds = read_households(text.as_bytes(), &schema, "t").unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_households(buf.as_slice(), &schema, "t").unwrap();
        assert_eq!(back.columns, ds.columns);
        assert_eq!(back.pce, ds.pce);
    }
}
