use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric binary adjacency between regions, stored as sorted neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContiguityMatrix {
    region_ids: Vec<String>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct AdjacencyDoc {
    version: u32,
    region_ids: Vec<String>,
    neighbors: Vec<Vec<String>>,
}

impl ContiguityMatrix {
    /// Builds from index pairs. Pairs may repeat or come in either order;
    /// self-loops and isolated regions are errors.
    pub fn from_edges(
        region_ids: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = region_ids.len();
        let mut sets = vec![BTreeSet::new(); n];
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) out of range for {n} regions"
                )));
            }
            if i == j {
                return Err(Error::invalid(format!(
                    "self-loop on region '{}'",
                    region_ids[i]
                )));
            }
            sets[i].insert(j);
            sets[j].insert(i);
        }
        if let Some(i) = sets.iter().position(BTreeSet::is_empty) {
            return Err(Error::invalid(format!(
                "region '{}' has no neighbour",
                region_ids[i]
            )));
        }
        Ok(Self {
            region_ids,
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.region_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_ids.is_empty()
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Unordered edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.neighbors.iter().enumerate() {
            out.extend(nb.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| if self.contains(i, j) { 1.0 } else { 0.0 })
    }

    /// Connected components of the subgraph induced by `members` (indices into this matrix).
    pub fn components_within(&self, members: &[usize]) -> Vec<Vec<usize>> {
        let inside: HashMap<usize, usize> =
            members.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut seen = vec![false; members.len()];
        let mut comps = Vec::new();
        for start in 0..members.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![members[start]];
            let mut queue = VecDeque::from([members[start]]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.neighbors[u] {
                    if let Some(&k) = inside.get(&v) {
                        if !seen[k] {
                            seen[k] = true;
                            comp.push(v);
                            queue.push_back(v);
                        }
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.len()).collect();
        self.components_within(&all).len() <= 1
    }

    /// Edge-list CSV with header `region_i,region_j`, one row per unordered pair.
    pub fn write_edge_list<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["region_i", "region_j"])?;
        for (i, j) in self.edges() {
            w.write_record([&self.region_ids[i], &self.region_ids[j]])?;
        }
        w.flush().map_err(|e| Error::io("<edge list>", e))?;
        Ok(())
    }

    /// Reads an edge list against a known region order.
    pub fn read_edge_list<R: Read>(reader: R, region_ids: Vec<String>) -> Result<Self> {
        let index: HashMap<&str, usize> = region_ids
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let mut rdr = csv::Reader::from_reader(reader);
        let mut edges = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let look = |k: usize| -> Result<usize> {
                let id = rec.get(k).unwrap_or("");
                index.get(id).copied().ok_or_else(|| Error::Parse {
                    path: "<edge list>".into(),
                    line,
                    message: format!("unknown region '{id}'"),
                })
            };
            edges.push((look(0)?, look(1)?));
        }
        Self::from_edges(region_ids, edges)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = AdjacencyDoc {
            version: 1,
            region_ids: self.region_ids.clone(),
            neighbors: self
                .neighbors
                .iter()
                .map(|nb| nb.iter().map(|&j| self.region_ids[j].clone()).collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: AdjacencyDoc = serde_json::from_str(text)?;
        if doc.neighbors.len() != doc.region_ids.len() {
            return Err(Error::Schema(
                "adjacency document: neighbour list count differs from region count".into(),
            ));
        }
        let index: HashMap<&str, usize> = doc
            .region_ids
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let mut edges = Vec::new();
        for (i, nb) in doc.neighbors.iter().enumerate() {
            for id in nb {
                let j = *index.get(id.as_str()).ok_or_else(|| {
                    Error::Schema(format!("adjacency document: unknown region '{id}'"))
                })?;
                edges.push((i, j));
            }
        }
        let m = Self::from_edges(doc.region_ids.clone(), edges)?;
        // a one-sided listing would be silently symmetrised above
        for (i, nb) in doc.neighbors.iter().enumerate() {
            if nb.len() != m.degree(i) {
                return Err(Error::Schema(format!(
                    "adjacency document is not symmetric at '{}'",
                    doc.region_ids[i]
                )));
            }
        }
        Ok(m)
    }
}

/// Row-standardised weights on the support of a contiguity matrix: `w_ij = 1 / deg(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStandardizedWeights {
    region_ids: Vec<String>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl RowStandardizedWeights {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Sum of all weights (S0); equals the region count.
    pub fn s0(&self) -> f64 {
        self.rows.iter().flatten().map(|&(_, w)| w).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// `W x` for a region-indexed vector in this matrix's region order.
    pub fn lag(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.len() {
            return Err(Error::invalid(format!(
                "lag input has {} entries for {} regions",
                values.len(),
                self.len()
            )));
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * values[j]).sum())
            .collect())
    }

    /// `W X`, lagging every column independently.
    pub fn lag_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.len() {
            return Err(Error::invalid(format!(
                "lag input has {} rows for {} regions",
                x.nrows(),
                self.len()
            )));
        }
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for c in 0..x.ncols() {
            let col: Vec<f64> = x.column(c).iter().copied().collect();
            for (i, v) in self.lag(&col)?.into_iter().enumerate() {
                out[(i, c)] = v;
            }
        }
        Ok(out)
    }

    /// Lags values keyed by region id; the key set must equal this matrix's regions.
    pub fn lag_keyed(&self, ids: &[String], values: &[f64]) -> Result<Vec<f64>> {
        let aligned = align_to(&self.region_ids, ids, values)?;
        self.lag(&aligned)
    }
}

/// Reorders `values` (keyed by `ids`) into `order`; errors unless the key sets match.
pub fn align_to(order: &[String], ids: &[String], values: &[f64]) -> Result<Vec<f64>> {
    if ids.len() != values.len() {
        return Err(Error::invalid("ids and values differ in length"));
    }
    if ids.len() != order.len() {
        return Err(Error::invalid(format!(
            "{} values supplied for {} regions",
            ids.len(),
            order.len()
        )));
    }
    let index: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    order
        .iter()
        .map(|r| {
            index
                .get(r.as_str())
                .map(|&k| values[k])
                .ok_or_else(|| Error::invalid(format!("no value for region '{r}'")))
        })
        .collect()
}

pub fn row_standardize(w: &ContiguityMatrix) -> Result<RowStandardizedWeights> {
    let mut rows = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let nb = w.neighbors(i);
        if nb.is_empty() {
            return Err(Error::invalid(format!(
                "region '{}' is isolated",
                w.region_ids()[i]
            )));
        }
        let wt = 1.0 / nb.len() as f64;
        rows.push(nb.iter().map(|&j| (j, wt)).collect());
    }
    Ok(RowStandardizedWeights {
        region_ids: w.region_ids().to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn triangle_weights_are_half() {
        let w = ContiguityMatrix::from_edges(ids(3), [(0, 1), (1, 2), (2, 0)]).unwrap();
        let rs = row_standardize(&w).unwrap();
        for i in 0..3 {
            assert!(rs.row(i).iter().all(|&(_, x)| x == 0.5));
        }
        assert_eq!(rs.lag(&[1.0, 2.0, 3.0]).unwrap(), vec![2.5, 2.0, 1.5]);
    }

    #[test]
    fn star_weights() {
        let w = ContiguityMatrix::from_edges(ids(5), (1..5).map(|j| (0, j))).unwrap();
        let rs = row_standardize(&w).unwrap();
        assert!(rs.row(0).iter().all(|&(_, x)| x == 0.25));
        for i in 1..5 {
            assert_eq!(rs.row(i), &[(0, 1.0)]);
        }
    }

    #[test]
    fn isolated_region_is_rejected() {
        assert!(ContiguityMatrix::from_edges(ids(3), [(0, 1)]).is_err());
        assert!(ContiguityMatrix::from_edges(ids(2), [(0, 0)]).is_err());
    }

    #[test]
    fn lag_index_mismatch_errors() {
        let w = ContiguityMatrix::from_edges(ids(3), [(0, 1), (1, 2)]).unwrap();
        let rs = row_standardize(&w).unwrap();
        assert!(rs.lag(&[1.0, 2.0]).is_err());
        let keys = vec!["r0".to_string(), "r1".into(), "zz".into()];
        assert!(rs.lag_keyed(&keys, &[1.0, 2.0, 3.0]).is_err());
        let shuffled = vec!["r2".to_string(), "r0".into(), "r1".into()];
        assert_eq!(
            rs.lag_keyed(&shuffled, &[3.0, 1.0, 2.0]).unwrap(),
            rs.lag(&[1.0, 2.0, 3.0]).unwrap()
        );
    }

    #[test]
    fn edge_list_and_json_round_trip() {
        let w =
            ContiguityMatrix::from_edges(ids(4), [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        let mut buf = Vec::new();
        w.write_edge_list(&mut buf).unwrap();
        let back = ContiguityMatrix::read_edge_list(buf.as_slice(), ids(4)).unwrap();
        assert_eq!(back, w);
        let mut buf2 = Vec::new();
        back.write_edge_list(&mut buf2).unwrap();
        assert_eq!(buf, buf2);

        let j = w.to_json().unwrap();
        let back = ContiguityMatrix::from_json(&j).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_json().unwrap(), j);
    }

    fn random_graph(n: usize, seed: u64) -> ContiguityMatrix {
        let mut rng = crate::rng::rng(seed);
        // spanning path plus random chords keeps every node covered
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        for _ in 0..n {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                edges.push((a, b));
            }
        }
        ContiguityMatrix::from_edges(ids(n), edges).unwrap()
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(n in 2usize..40, seed in any::<u64>()) {
            let rs = row_standardize(&random_graph(n, seed)).unwrap();
            for i in 0..n {
                let s: f64 = rs.row(i).iter().map(|&(_, w)| w).sum();
                prop_assert!((s - 1.0).abs() < 1e-15);
            }
        }

        #[test]
        fn lag_is_linear_and_fixes_constants(n in 2usize..40, seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0, c in -100.0f64..100.0) {
            let rs = row_standardize(&random_graph(n, seed)).unwrap();
            let mut rng = crate::rng::rng(seed ^ 1);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = rs.lag(&combo).unwrap();
            let (lx, ly) = (rs.lag(&x).unwrap(), rs.lag(&y).unwrap());
            for i in 0..n {
                prop_assert!((lhs[i] - (a * lx[i] + b * ly[i])).abs() < 1e-12);
            }
            for v in rs.lag(&vec![c; n]).unwrap() {
                prop_assert!((v - c).abs() <= 1e-15 * c.abs().max(1.0));
            }
        }
    }

    #[test]
    fn lag_matches_dense_product() {
        for seed in 0..20 {
            let w = random_graph(20, seed);
            let rs = row_standardize(&w).unwrap();
            let mut rng = crate::rng::rng(seed);
            let x = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-10.0..10.0));
            let dense = rs.to_dense() * &x;
            let lagged = rs.lag_matrix(&x).unwrap();
            assert!((dense - lagged).abs().max() < 1e-12);
        }
    }
}
