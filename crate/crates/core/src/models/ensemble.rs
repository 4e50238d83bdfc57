//! Gradient-boosted trees (logistic loss) and random forests.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::tree::{grow_tree, Presorted, Tree, TreeConfig, TreeData};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingParams {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, Copy)]
pub struct BoostingConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: f64,
}

/// Friedman boosting: each tree fits the residual `y - p` by least squares and
/// its leaves take one Newton step `Σr / Σp(1-p)`.
pub fn fit_boosting(x: &DMatrix<f64>, y: &[u8], cfg: &BoostingConfig) -> BoostingParams {
    let n = x.nrows();
    let prior = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let init = (prior / (1.0 - prior)).ln();
    let sorted = Presorted::new(x);
    let ones = vec![1.0; n];
    let mut f = vec![init; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let tree_cfg = TreeConfig {
        max_depth: Some(cfg.max_depth),
        min_leaf: cfg.min_leaf,
        max_features: None,
    };
    let mut resid = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.n_trees {
        for i in 0..n {
            let p = sigmoid(f[i]);
            resid[i] = f64::from(y[i]) - p;
            hess[i] = p * (1.0 - p);
        }
        let data = TreeData {
            target: &resid,
            weight: &ones,
            leaf_num: &resid,
            leaf_den: &hess,
        };
        let tree = grow_tree(x, &sorted, data, tree_cfg, None);
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += cfg.learning_rate * tree.predict_row(x, i);
        }
        trees.push(tree);
    }
    BoostingParams {
        init,
        learning_rate: cfg.learning_rate,
        trees,
    }
}

impl BoostingParams {
    pub fn decision(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| sigmoid(self.decision(x, i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, Copy)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: f64,
    pub max_features: usize,
    pub max_depth: Option<usize>,
}

/// Bootstrap forest of probability trees. Tree `t` draws from stream `t` of
/// `seed`, so the output does not depend on the thread count.
pub fn fit_forest(x: &DMatrix<f64>, y: &[u8], cfg: &ForestConfig, seed: u64) -> ForestParams {
    let n = x.nrows();
    let sorted = Presorted::new(x);
    let target: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let tree_cfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        max_features: Some(cfg.max_features),
    };
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, t as u64);
            let mut counts = vec![0.0; n];
            for _ in 0..n {
                counts[r.random_range(0..n)] += 1.0;
            }
            let num: Vec<f64> = counts.iter().zip(&target).map(|(c, v)| c * v).collect();
            let data = TreeData {
                target: &target,
                weight: &counts,
                leaf_num: &num,
                leaf_den: &counts,
            };
            grow_tree(x, &sorted, data, tree_cfg, Some(&mut r))
        })
        .collect();
    ForestParams { trees }
}

impl ForestParams {
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>()
                    / self.trees.len() as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn xor_data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
        let mut r = rng::rng(seed);
        let x = DMatrix::from_fn(n, 3, |_, _| StandardNormal.sample(&mut r));
        let y = (0..n)
            .map(|i| u8::from((x[(i, 0)] > 0.0) != (x[(i, 1)] > 0.0)))
            .collect();
        (x, y)
    }

    fn accuracy(p: &[f64], y: &[u8]) -> f64 {
        p.iter()
            .zip(y)
            .filter(|(p, &y)| u8::from(**p >= 0.5) == y)
            .count() as f64
            / y.len() as f64
    }

    #[test]
    fn boosting_learns_interaction() {
        let (x, y) = xor_data(1000, 1);
        let (xt, yt) = xor_data(1000, 2);
        let cfg = BoostingConfig {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 1.0,
        };
        let m = fit_boosting(&x, &y, &cfg);
        assert!(accuracy(&m.predict_proba(&xt), &yt) > 0.9);
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
    }

    #[test]
    fn boosting_with_zero_trees_predicts_prior() {
        let (x, y) = xor_data(200, 3);
        let m = fit_boosting(
            &x,
            &y,
            &BoostingConfig {
                n_trees: 0,
                max_depth: 3,
                learning_rate: 0.1,
                min_leaf: 1.0,
            },
        );
        let prior = y.iter().map(|&v| f64::from(v)).sum::<f64>() / 200.0;
        assert!((m.predict_proba(&x)[0] - prior).abs() < 1e-12);
    }

    #[test]
    fn forest_memorises_and_is_thread_independent() {
        let (x, y) = xor_data(400, 4);
        let cfg = ForestConfig {
            n_trees: 50,
            min_leaf: 1.0,
            max_features: 2,
            max_depth: None,
        };
        let par = fit_forest(&x, &y, &cfg, 9);
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| fit_forest(&x, &y, &cfg, 9));
        assert_eq!(par, serial);
        assert!(accuracy(&par.predict_proba(&x), &y) > 0.97);
    }
}
