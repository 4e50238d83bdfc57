use log::warn;
use nalgebra::DMatrix;

use super::contiguity::RowStandardizedWeights;
use crate::data::{Column, ColumnData, Dataset, VariableSpec};
use crate::error::{Error, Result};

/// Region means of numeric household features, one row per region in `region_ids`
/// order. Regions without households take the overall mean.
pub fn region_means(
    ds: &Dataset,
    features: &[String],
    region_ids: &[String],
) -> Result<DMatrix<f64>> {
    let x = ds.feature_matrix(features)?;
    let index: std::collections::HashMap<&str, usize> = region_ids
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let mut sums = DMatrix::zeros(region_ids.len(), features.len());
    let mut counts = vec![0usize; region_ids.len()];
    for (row, r) in ds.region_id.iter().enumerate() {
        let g = *index.get(r.as_str()).ok_or_else(|| {
            Error::invalid(format!("household region '{r}' is not in the weights"))
        })?;
        counts[g] += 1;
        for j in 0..features.len() {
            sums[(g, j)] += x[(row, j)];
        }
    }
    let overall: Vec<f64> = (0..features.len())
        .map(|j| {
            if ds.is_empty() {
                0.0
            } else {
                x.column(j).mean()
            }
        })
        .collect();
    let mut empty = 0;
    for g in 0..region_ids.len() {
        for j in 0..features.len() {
            sums[(g, j)] = if counts[g] > 0 {
                sums[(g, j)] / counts[g] as f64
            } else {
                overall[j]
            };
        }
        if counts[g] == 0 {
            empty += 1;
        }
    }
    if empty > 0 {
        warn!("{empty} regions have no households; their means use the overall mean");
    }
    Ok(sums)
}

/// Appends `lag_<feature>` columns: each household receives the spatial lag of
/// its region's feature means.
pub fn lag_features_to_households(
    wrs: &RowStandardizedWeights,
    region_features: &DMatrix<f64>,
    features: &[String],
    ds: &Dataset,
) -> Result<Dataset> {
    if region_features.ncols() != features.len() {
        return Err(Error::invalid(
            "region feature matrix width differs from feature names",
        ));
    }
    let lagged = wrs.lag_matrix(region_features)?;
    let index: std::collections::HashMap<&str, usize> = wrs
        .region_ids()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let rows: Vec<usize> = ds
        .region_id
        .iter()
        .map(|r| {
            index.get(r.as_str()).copied().ok_or_else(|| {
                Error::invalid(format!("household region '{r}' is not in the weights"))
            })
        })
        .collect::<Result<_>>()?;
    let mut out = ds.clone();
    for (j, name) in features.iter().enumerate() {
        let lag_name = format!("lag_{name}");
        if out.column_index(&lag_name).is_some() {
            return Err(Error::Schema(format!("column '{lag_name}' already exists")));
        }
        out.columns.push(Column {
            spec: VariableSpec::continuous(lag_name),
            data: ColumnData::Numeric(rows.iter().map(|&g| Some(lagged[(g, j)])).collect()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{row_standardize, ContiguityMatrix};

    fn ds(regions: &[&str], x: &[f64]) -> Dataset {
        let n = regions.len();
        Dataset::new(
            (0..n).map(|i| format!("h{i}")).collect(),
            regions.iter().map(|s| s.to_string()).collect(),
            vec![2020; n],
            vec![1.0; n],
            vec![Column {
                spec: VariableSpec::continuous("x"),
                data: ColumnData::Numeric(x.iter().map(|&v| Some(v)).collect()),
            }],
            "t",
        )
        .unwrap()
    }

    #[test]
    fn two_regions_swap_means() {
        let ids = vec!["A".to_string(), "B".to_string()];
        let w =
            row_standardize(&ContiguityMatrix::from_edges(ids.clone(), [(0, 1)]).unwrap()).unwrap();
        let d = ds(&["A", "A", "B", "B"], &[5.0, 15.0, 20.0, 20.0]);
        let feats = vec!["x".to_string()];
        let means = region_means(&d, &feats, &ids).unwrap();
        assert_eq!(means.as_slice(), &[10.0, 20.0]);
        let out = lag_features_to_households(&w, &means, &feats, &d).unwrap();
        assert_eq!(out.len(), d.len());
        assert_eq!(out.columns.len(), 2);
        assert_eq!(out.columns[1].spec.name, "lag_x");
        assert_eq!(
            out.columns[1].numeric().unwrap(),
            &[Some(20.0), Some(20.0), Some(10.0), Some(10.0)]
        );
    }

    #[test]
    fn unknown_region_errors() {
        let ids = vec!["A".to_string(), "B".to_string()];
        let w =
            row_standardize(&ContiguityMatrix::from_edges(ids.clone(), [(0, 1)]).unwrap()).unwrap();
        let d = ds(&["A", "C"], &[1.0, 2.0]);
        let means = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(lag_features_to_households(&w, &means, &["x".to_string()], &d).is_err());
    }

    #[test]
    fn lagged_means_match_direct_recomputation() {
        use rand::Rng;
        let mut rng = crate::rng::rng(11);
        let n_reg = 12;
        let ids: Vec<String> = (0..n_reg).map(|i| format!("R{i}")).collect();
        let edges: Vec<(usize, usize)> = (1..n_reg)
            .map(|i| (i - 1, i))
            .chain([(0, 5), (3, 9)])
            .collect();
        let cm = ContiguityMatrix::from_edges(ids.clone(), edges).unwrap();
        let w = row_standardize(&cm).unwrap();
        let regions: Vec<&str> = (0..300).map(|i| ids[i % n_reg].as_str()).collect();
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-3.0..3.0)).collect();
        let d = ds(&regions, &x);
        let feats = vec!["x".to_string()];
        let out =
            lag_features_to_households(&w, &region_means(&d, &feats, &ids).unwrap(), &feats, &d)
                .unwrap();
        let lag = out.columns[1].numeric().unwrap();
        for (h, got) in lag.iter().enumerate() {
            let g = h % n_reg;
            // neighbour means computed straight from the raw rows
            let nb = cm.neighbors(g);
            let mut acc = 0.0;
            for &k in nb {
                let vals: Vec<f64> = (0..300).filter(|&i| i % n_reg == k).map(|i| x[i]).collect();
                acc += vals.iter().sum::<f64>() / vals.len() as f64;
            }
            let expect = acc / nb.len() as f64;
            assert!((got.unwrap() - expect).abs() < 1e-12);
        }
    }
}
