//! Contiguity-constrained divisive regionalization.
//!
//! The contiguity graph is reduced to a minimum spanning tree weighted by
//! Euclidean feature distance. Clusters are then split one at a time by
//! removing the tree edge that most reduces the total within-cluster sum of
//! squared deviations; removing a tree edge always leaves two connected parts.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::ContiguityMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Label of the cluster that was divided.
    pub parent: usize,
    /// `[parent, new]`: the side holding the parent's first region keeps the parent label.
    pub children: [usize; 2],
    pub heterogeneity_reduction: f64,
    pub cut_edge: (String, String),
    /// Regions that moved to the new label.
    pub moved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub region_ids: Vec<String>,
    /// Within-cluster SSD of the single all-region cluster.
    pub total_ssd: f64,
    pub splits: Vec<Split>,
}

impl Dendrogram {
    pub fn k_max(&self) -> usize {
        self.splits.len() + 1
    }

    /// Total within-cluster SSD after each number of clusters 1..=k_max.
    pub fn ssd_path(&self) -> Vec<f64> {
        let mut out = vec![self.total_ssd];
        for s in &self.splits {
            let last = *out.last().unwrap();
            out.push(last - s.heterogeneity_reduction);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Cluster label (1..=k) per region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub region_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    /// Every region in one cluster.
    pub fn single(region_ids: Vec<String>) -> Self {
        let n = region_ids.len();
        Self {
            region_ids,
            labels: vec![1; n],
            k: 1,
        }
    }

    pub fn label_of(&self, region_id: &str) -> Option<usize> {
        self.region_ids
            .iter()
            .position(|r| r == region_id)
            .map(|i| self.labels[i])
    }

    pub fn lookup(&self) -> HashMap<&str, usize> {
        self.region_ids
            .iter()
            .map(String::as_str)
            .zip(self.labels.iter().copied())
            .collect()
    }

    pub fn members(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["region_id", "cluster"])?;
        for (r, l) in self.region_ids.iter().zip(&self.labels) {
            w.write_record([r.clone(), l.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<assignment csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut region_ids = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            region_ids.push(rec.get(0).unwrap_or("").to_string());
            let l: usize = rec.get(1).unwrap_or("").parse().map_err(|_| Error::Parse {
                path: "<assignment csv>".into(),
                line: rec.position().map(|p| p.line() as usize).unwrap_or(0),
                message: "bad cluster label".into(),
            })?;
            labels.push(l);
        }
        let k = labels.iter().copied().max().unwrap_or(0);
        if (1..=k).any(|l| !labels.contains(&l)) {
            return Err(Error::invalid("assignment labels are not contiguous 1..k"));
        }
        Ok(Self {
            region_ids,
            labels,
            k,
        })
    }
}

/// Z-scores each column (sample standard deviation). Zero-variance columns
/// are dropped; the kept column indices are returned alongside.
pub fn standardize_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let n = x.nrows() as f64;
    let mut kept = Vec::new();
    let mut cols = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        if var > 0.0 {
            let sd = var.sqrt();
            cols.push(col.map(|v| (v - mean) / sd));
            kept.push(j);
        }
    }
    let m = if cols.is_empty() {
        DMatrix::zeros(x.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    (m, kept)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn distance(x: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..x.ncols())
        .map(|c| (x[(i, c)] - x[(j, c)]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Kruskal minimum spanning tree, ties broken by edge index pair.
pub fn minimum_spanning_tree(w: &ContiguityMatrix, features: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let mut edges: Vec<(f64, usize, usize)> = w
        .edges()
        .into_iter()
        .map(|(i, j)| (distance(features, i, j), i, j))
        .collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf = UnionFind((0..w.len()).collect());
    edges
        .into_iter()
        .filter(|&(_, i, j)| uf.union(i, j))
        .map(|(_, i, j)| (i, j))
        .collect()
}

#[derive(Clone)]
struct Moments {
    count: f64,
    sum: Vec<f64>,
    sumsq: f64,
}

impl Moments {
    fn empty(p: usize) -> Self {
        Self {
            count: 0.0,
            sum: vec![0.0; p],
            sumsq: 0.0,
        }
    }

    fn add_row(&mut self, x: &DMatrix<f64>, i: usize) {
        self.count += 1.0;
        for c in 0..x.ncols() {
            let v = x[(i, c)];
            self.sum[c] += v;
            self.sumsq += v * v;
        }
    }

    fn add(&mut self, o: &Moments) {
        self.count += o.count;
        for (a, b) in self.sum.iter_mut().zip(&o.sum) {
            *a += b;
        }
        self.sumsq += o.sumsq;
    }

    fn minus(&self, o: &Moments) -> Moments {
        Moments {
            count: self.count - o.count,
            sum: self.sum.iter().zip(&o.sum).map(|(a, b)| a - b).collect(),
            sumsq: self.sumsq - o.sumsq,
        }
    }

    fn ssd(&self) -> f64 {
        if self.count == 0.0 {
            return 0.0;
        }
        (self.sumsq - self.sum.iter().map(|s| s * s).sum::<f64>() / self.count).max(0.0)
    }
}

/// SSD of a region set computed directly from deviations.
pub fn within_ssd(features: &DMatrix<f64>, members: &[usize]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let p = features.ncols();
    let m = members.len() as f64;
    (0..p)
        .map(|c| {
            let mean = members.iter().map(|&i| features[(i, c)]).sum::<f64>() / m;
            members
                .iter()
                .map(|&i| (features[(i, c)] - mean).powi(2))
                .sum::<f64>()
        })
        .sum()
}

struct Candidate {
    reduction: f64,
    edge: (usize, usize),
    // the side not containing the cluster's smallest region
    moved: Vec<usize>,
}

fn best_cut(
    members: &[usize],
    tree: &[Vec<usize>],
    features: &DMatrix<f64>,
    ids: &[String],
) -> Option<Candidate> {
    if members.len() < 2 {
        return None;
    }
    let root = *members.iter().min().unwrap();
    // iterative DFS order with parents
    let mut parent: HashMap<usize, usize> = HashMap::with_capacity(members.len());
    let mut order = Vec::with_capacity(members.len());
    let mut stack = vec![root];
    parent.insert(root, usize::MAX);
    while let Some(u) = stack.pop() {
        order.push(u);
        for &v in &tree[u] {
            if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(v) {
                e.insert(u);
                stack.push(v);
            }
        }
    }
    let p = features.ncols();
    let mut sub: HashMap<usize, Moments> = HashMap::with_capacity(order.len());
    for &u in order.iter().rev() {
        let mut m = Moments::empty(p);
        m.add_row(features, u);
        for &v in &tree[u] {
            if parent.get(&v) == Some(&u) {
                let child = sub[&v].clone();
                m.add(&child);
            }
        }
        sub.insert(u, m);
    }
    let total = &sub[&root];
    let total_ssd = total.ssd();

    let key = |(a, b): (usize, usize)| {
        let (x, y) = (&ids[a], &ids[b]);
        if x <= y {
            (x.clone(), y.clone())
        } else {
            (y.clone(), x.clone())
        }
    };
    let mut best: Option<(f64, (usize, usize))> = None;
    for &u in &order {
        if u == root {
            continue;
        }
        let below = &sub[&u];
        let above = total.minus(below);
        let red = (total_ssd - below.ssd() - above.ssd()).max(0.0);
        let edge = (parent[&u], u);
        let better = match best {
            None => true,
            Some((r, e)) => red > r || (red == r && key(edge) < key(e)),
        };
        if better {
            best = Some((red, edge));
        }
    }
    let (reduction, edge) = best?;
    // collect the subtree under the cut
    let mut moved = Vec::new();
    let mut stack = vec![edge.1];
    while let Some(u) = stack.pop() {
        moved.push(u);
        for &v in &tree[u] {
            if parent.get(&v) == Some(&u) {
                stack.push(v);
            }
        }
    }
    moved.sort_unstable();
    Some(Candidate {
        reduction,
        edge,
        moved,
    })
}

/// Builds the divisive hierarchy down to `k_max` clusters.
pub fn constrained_divisive_cluster(
    features: &DMatrix<f64>,
    w: &ContiguityMatrix,
    k_max: usize,
) -> Result<Dendrogram> {
    let n = w.len();
    if features.nrows() != n {
        return Err(Error::invalid(format!(
            "feature matrix has {} rows for {n} regions",
            features.nrows()
        )));
    }
    if k_max == 0 || k_max > n {
        return Err(Error::invalid(format!("k_max {k_max} outside 1..={n}")));
    }
    if !w.is_connected() {
        return Err(Error::invalid("contiguity graph is disconnected"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite clustering feature"));
    }
    let ids = w.region_ids();
    let mst = minimum_spanning_tree(w, features);
    let mut tree = vec![Vec::new(); n];
    for &(i, j) in &mst {
        tree[i].push(j);
        tree[j].push(i);
    }
    for nb in &mut tree {
        nb.sort_unstable();
    }

    let all: Vec<usize> = (0..n).collect();
    let total_ssd = within_ssd(features, &all);
    let mut labels = vec![1usize; n];
    let mut candidates: HashMap<usize, Option<Candidate>> = HashMap::new();
    candidates.insert(1, best_cut(&all, &tree, features, ids));
    let mut splits = Vec::with_capacity(k_max - 1);

    for t in 0..k_max - 1 {
        let pick = candidates
            .iter()
            .filter_map(|(&l, c)| c.as_ref().map(|c| (l, c)))
            .max_by(|(la, a), (lb, b)| {
                a.reduction
                    .total_cmp(&b.reduction)
                    .then_with(|| {
                        let ka = sorted_pair(ids, a.edge);
                        let kb = sorted_pair(ids, b.edge);
                        kb.cmp(&ka)
                    })
                    .then(lb.cmp(la))
            })
            .map(|(l, _)| l)
            .ok_or_else(|| Error::Numeric("no divisible cluster left".into()))?;
        let cand = candidates
            .remove(&pick)
            .flatten()
            .expect("picked candidate exists");
        let new_label = t + 2;
        for &i in &cand.moved {
            labels[i] = new_label;
        }
        let (a, b) = cand.edge;
        tree[a].retain(|&v| v != b);
        tree[b].retain(|&v| v != a);
        let cut = sorted_pair(ids, cand.edge);
        splits.push(Split {
            parent: pick,
            children: [pick, new_label],
            heterogeneity_reduction: cand.reduction,
            cut_edge: cut,
            moved: cand.moved.iter().map(|&i| ids[i].clone()).collect(),
        });
        for l in [pick, new_label] {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == l).collect();
            candidates.insert(l, best_cut(&members, &tree, features, ids));
        }
    }

    Ok(Dendrogram {
        region_ids: ids.to_vec(),
        total_ssd,
        splits,
    })
}

fn sorted_pair(ids: &[String], (a, b): (usize, usize)) -> (String, String) {
    let (x, y) = (ids[a].clone(), ids[b].clone());
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

/// Replays the first `k - 1` splits.
pub fn cut_dendrogram(d: &Dendrogram, k: usize) -> Result<ClusterAssignment> {
    if k == 0 || k > d.k_max() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", d.k_max())));
    }
    let index: HashMap<&str, usize> = d
        .region_ids
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let mut labels = vec![1usize; d.region_ids.len()];
    for (t, s) in d.splits.iter().take(k - 1).enumerate() {
        for r in &s.moved {
            let i = *index
                .get(r.as_str())
                .ok_or_else(|| Error::invalid(format!("dendrogram moves unknown region '{r}'")))?;
            labels[i] = t + 2;
        }
    }
    Ok(ClusterAssignment {
        region_ids: d.region_ids.clone(),
        labels,
        k,
    })
}

/// True iff every cluster induces a connected subgraph of `w`.
pub fn assert_connected(assignment: &ClusterAssignment, w: &ContiguityMatrix) -> bool {
    if assignment.region_ids.len() != w.len() || assignment.labels.len() != w.len() {
        return false;
    }
    let lookup = assignment.lookup();
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, r) in w.region_ids().iter().enumerate() {
        match lookup.get(r.as_str()) {
            Some(&l) => groups.entry(l).or_default().push(i),
            None => return false,
        }
    }
    groups.values().all(|m| w.components_within(m).len() == 1)
}
