//! Weighted least-squares regression trees with exact, presorted split search.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if x[(i, feature)] <= threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match t.nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

/// Row indices sorted by value for every column (ties by row index).
#[derive(Debug, Clone)]
pub struct Presorted(Vec<Vec<usize>>);

impl Presorted {
    pub fn new(x: &DMatrix<f64>) -> Self {
        Self(
            (0..x.ncols())
                .map(|j| {
                    let mut idx: Vec<usize> = (0..x.nrows()).collect();
                    idx.sort_by(|&a, &b| x[(a, j)].total_cmp(&x[(b, j)]).then(a.cmp(&b)));
                    idx
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    /// Minimum total weight on each side of a split.
    pub min_leaf: f64,
    /// Features examined per node; `None` means all.
    pub max_features: Option<usize>,
}

/// Per-row inputs. Splits minimise weighted squared error of `target`;
/// each leaf predicts `Σ leaf_num / Σ leaf_den` over its rows.
pub struct TreeData<'a> {
    pub target: &'a [f64],
    pub weight: &'a [f64],
    pub leaf_num: &'a [f64],
    pub leaf_den: &'a [f64],
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    data: TreeData<'a>,
    cfg: TreeConfig,
    cols: Vec<Vec<usize>>,
    go_left: Vec<bool>,
    scratch: Vec<usize>,
    nodes: Vec<Node>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, lo: usize, hi: usize) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &i in &self.cols[0][lo..hi] {
            num += self.data.leaf_num[i];
            den += self.data.leaf_den[i];
        }
        if den.abs() < 1e-150 {
            0.0
        } else {
            num / den
        }
    }

    fn search(&self, f: usize, lo: usize, hi: usize, tw: f64, ts: f64, best: &mut Option<Best>) {
        let rows = &self.cols[f][lo..hi];
        let base = ts * ts / tw;
        let (mut wl, mut sl) = (0.0, 0.0);
        for k in 0..rows.len() - 1 {
            let i = rows[k];
            wl += self.data.weight[i];
            sl += self.data.weight[i] * self.data.target[i];
            let (a, b) = (self.x[(i, f)], self.x[(rows[k + 1], f)]);
            if a == b {
                continue;
            }
            let wr = tw - wl;
            if wl < self.cfg.min_leaf || wr < self.cfg.min_leaf {
                continue;
            }
            let sr = ts - sl;
            let gain = sl * sl / wl + sr * sr / wr - base;
            if gain > 1e-12 * base.abs().max(1e-300) && best.as_ref().is_none_or(|b| gain > b.gain)
            {
                let mid = 0.5 * (a + b);
                *best = Some(Best {
                    gain,
                    feature: f,
                    threshold: if mid < b { mid } else { a },
                });
            }
        }
    }

    fn grow(&mut self, lo: usize, hi: usize, depth: usize, rng: &mut Option<&mut Rng>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(lo, hi),
        });
        let (mut tw, mut ts) = (0.0, 0.0);
        for &i in &self.cols[0][lo..hi] {
            tw += self.data.weight[i];
            ts += self.data.weight[i] * self.data.target[i];
        }
        if hi - lo < 2
            || self.cfg.max_depth.is_some_and(|d| depth >= d)
            || tw < 2.0 * self.cfg.min_leaf
        {
            return id;
        }
        let p = self.cols.len();
        let features: Vec<usize> = match (self.cfg.max_features, rng.as_deref_mut()) {
            (Some(m), Some(r)) if m < p => {
                let mut all: Vec<usize> = (0..p).collect();
                let (chosen, _) = all.partial_shuffle(r, m);
                let mut chosen = chosen.to_vec();
                chosen.sort_unstable();
                chosen
            }
            _ => (0..p).collect(),
        };
        let mut best = None;
        for f in features {
            self.search(f, lo, hi, tw, ts, &mut best);
        }
        let Some(best) = best else { return id };

        let mut n_left = 0;
        for &i in &self.cols[best.feature][lo..hi] {
            let l = self.x[(i, best.feature)] <= best.threshold;
            self.go_left[i] = l;
            n_left += usize::from(l);
        }
        for f in 0..p {
            self.scratch.clear();
            let col = &mut self.cols[f];
            let mut w = lo;
            for k in lo..hi {
                let i = col[k];
                if self.go_left[i] {
                    col[w] = i;
                    w += 1;
                } else {
                    self.scratch.push(i);
                }
            }
            col[w..hi].copy_from_slice(&self.scratch);
        }
        let mid = lo + n_left;
        let left = self.grow(lo, mid, depth + 1, rng);
        let right = self.grow(mid, hi, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }
}

/// Grows one tree over rows with positive weight.
pub fn grow_tree(
    x: &DMatrix<f64>,
    sorted: &Presorted,
    data: TreeData<'_>,
    cfg: TreeConfig,
    mut rng: Option<&mut Rng>,
) -> Tree {
    let cols: Vec<Vec<usize>> = sorted
        .0
        .iter()
        .map(|c| {
            c.iter()
                .copied()
                .filter(|&i| data.weight[i] > 0.0)
                .collect()
        })
        .collect();
    let m = cols.first().map_or(0, Vec::len);
    let mut b = Builder {
        x,
        data,
        cfg,
        cols,
        go_left: vec![false; x.nrows()],
        scratch: Vec::with_capacity(m),
        nodes: Vec::new(),
    };
    if m == 0 || b.cols.is_empty() {
        return Tree {
            nodes: vec![Node::Leaf { value: 0.0 }],
        };
    }
    b.grow(0, m, 0, &mut rng);
    Tree { nodes: b.nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn mean_tree(x: &DMatrix<f64>, y: &[f64], cfg: TreeConfig) -> Tree {
        let ones = vec![1.0; y.len()];
        let data = TreeData {
            target: y,
            weight: &ones,
            leaf_num: y,
            leaf_den: &ones,
        };
        grow_tree(x, &Presorted::new(x), data, cfg, None)
    }

    #[test]
    fn stump_finds_the_step() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..10).map(|i| if i < 4 { 1.0 } else { 5.0 }).collect();
        let t = mean_tree(
            &x,
            &y,
            TreeConfig {
                max_depth: Some(1),
                min_leaf: 1.0,
                max_features: None,
            },
        );
        assert_eq!(
            t.nodes[0],
            Node::Split {
                feature: 0,
                threshold: 3.5,
                left: 1,
                right: 2
            }
        );
        assert_eq!(t.predict_row(&x, 0), 1.0);
        assert_eq!(t.predict_row(&x, 9), 5.0);
    }

    // brute force: best single split over every feature and threshold
    fn brute_best_sse(x: &DMatrix<f64>, y: &[f64], min_leaf: usize) -> f64 {
        let sse = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>()
        };
        let mut best = sse(y);
        for f in 0..x.ncols() {
            for i in 0..x.nrows() {
                let t = x[(i, f)];
                let (l, r): (Vec<usize>, Vec<usize>) =
                    (0..x.nrows()).partition(|&k| x[(k, f)] <= t);
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let lv: Vec<f64> = l.iter().map(|&k| y[k]).collect();
                let rv: Vec<f64> = r.iter().map(|&k| y[k]).collect();
                best = best.min(sse(&lv) + sse(&rv));
            }
        }
        best
    }

    #[test]
    fn stump_matches_brute_force() {
        let mut rng = crate::rng::rng(3);
        for _ in 0..30 {
            let x = DMatrix::from_fn(25, 3, |_, _| (rng.random_range(0..8)) as f64);
            let y: Vec<f64> = (0..25).map(|_| rng.random::<f64>()).collect();
            let t = mean_tree(
                &x,
                &y,
                TreeConfig {
                    max_depth: Some(1),
                    min_leaf: 2.0,
                    max_features: None,
                },
            );
            let pred: Vec<f64> = (0..25).map(|i| t.predict_row(&x, i)).collect();
            let sse: f64 = pred.iter().zip(&y).map(|(p, v)| (p - v).powi(2)).sum();
            assert!((sse - brute_best_sse(&x, &y, 2)).abs() < 1e-9);
        }
    }

    #[test]
    fn deep_tree_memorises_distinct_rows() {
        let mut rng = crate::rng::rng(5);
        let x = DMatrix::from_fn(60, 2, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let t = mean_tree(
            &x,
            &y,
            TreeConfig {
                max_depth: None,
                min_leaf: 1.0,
                max_features: None,
            },
        );
        for (i, &yi) in y.iter().enumerate().take(60) {
            assert_eq!(t.predict_row(&x, i), yi);
        }
    }

    #[test]
    fn weights_act_as_row_counts() {
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64);
        let y = [0.0, 0.0, 1.0, 1.0, 3.0, 3.0];
        let w = [2.0, 0.0, 1.0, 1.0, 0.0, 2.0];
        let num: Vec<f64> = y.iter().zip(&w).map(|(a, b)| a * b).collect();
        let data = TreeData {
            target: &y,
            weight: &w,
            leaf_num: &num,
            leaf_den: &w,
        };
        let t = grow_tree(
            &x,
            &Presorted::new(&x),
            data,
            TreeConfig {
                max_depth: Some(0),
                min_leaf: 1.0,
                max_features: None,
            },
            None,
        );
        assert!((t.predict_row(&x, 0) - 8.0 / 6.0).abs() < 1e-15);
    }
}
