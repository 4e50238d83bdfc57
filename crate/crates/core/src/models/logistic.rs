//! Logistic regression: full-batch gradient descent with backtracking line
//! search, and plain stochastic gradient descent.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticParams {
    pub fn zeros(p: usize) -> Self {
        Self {
            intercept: 0.0,
            weights: vec![0.0; p],
        }
    }

    pub fn margin(&self, row: impl IntoIterator<Item = f64>) -> f64 {
        self.intercept
            + self
                .weights
                .iter()
                .zip(row)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| sigmoid(self.margin(x.row(i).iter().copied())))
            .collect()
    }
}

/// Mean log loss plus `l2/2 · |w|²` (intercept unpenalised).
pub fn log_loss(params: &LogisticParams, x: &DMatrix<f64>, y: &[u8], l2: f64) -> f64 {
    let n = x.nrows() as f64;
    let data: f64 = (0..x.nrows())
        .map(|i| {
            let z = params.margin(x.row(i).iter().copied());
            softplus(z) - f64::from(y[i]) * z
        })
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * params.weights.iter().map(|w| w * w).sum::<f64>()
}

fn gradient(params: &LogisticParams, x: &DMatrix<f64>, y: &[u8], l2: f64) -> (f64, DVector<f64>) {
    let n = x.nrows() as f64;
    let w = DVector::from_column_slice(&params.weights);
    let z = x * &w;
    let r = DVector::from_iterator(
        x.nrows(),
        (0..x.nrows()).map(|i| sigmoid(z[i] + params.intercept) - f64::from(y[i])),
    );
    let gw = x.tr_mul(&r) / n + w * l2;
    (r.sum() / n, gw)
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

pub fn fit_logistic(x: &DMatrix<f64>, y: &[u8], cfg: &LogisticConfig) -> LogisticParams {
    let mut params = LogisticParams::zeros(x.ncols());
    let mut loss = log_loss(&params, x, y, cfg.l2);
    let mut step = 1.0;
    for _ in 0..cfg.max_iter {
        let (gb, gw) = gradient(&params, x, y, cfg.l2);
        let gnorm2 = gb * gb + gw.norm_squared();
        if gnorm2.sqrt() < cfg.tol {
            break;
        }
        // Armijo backtracking, starting from twice the last accepted step
        step *= 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = LogisticParams {
                intercept: params.intercept - step * gb,
                weights: params
                    .weights
                    .iter()
                    .zip(gw.iter())
                    .map(|(w, g)| w - step * g)
                    .collect(),
            };
            let trial_loss = log_loss(&trial, x, y, cfg.l2);
            if trial_loss <= loss - 1e-4 * step * gnorm2 {
                params = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    params
}

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub step: f64,
    pub epochs: usize,
    pub l2: f64,
}

/// Per-sample updates; epoch `e` visits rows in the order drawn from stream `e`.
pub fn fit_sgd(x: &DMatrix<f64>, y: &[u8], cfg: &SgdConfig, seed: u64) -> LogisticParams {
    let mut params = LogisticParams::zeros(x.ncols());
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, epoch as u64));
        for &i in &order {
            let row = x.row(i);
            let r = sigmoid(params.margin(row.iter().copied())) - f64::from(y[i]);
            params.intercept -= cfg.step * r;
            for (w, xv) in params.weights.iter_mut().zip(row.iter()) {
                *w -= cfg.step * (r * xv + cfg.l2 * *w);
            }
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
        let mut rng = crate::rng::rng(seed);
        let mut x = DMatrix::zeros(n, 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(-3.0..3.0);
            let s = a + 2.0 * b;
            let s = if s.abs() < 0.3 {
                s.signum() * 0.3 + s
            } else {
                s
            };
            x[(i, 0)] = a;
            x[(i, 1)] = (s - a) / 2.0;
            y.push(u8::from(s > 0.0));
        }
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
    fn separable_training_accuracy() {
        let (x, y) = separable(400, 1);
        let fit = fit_logistic(
            &x,
            &y,
            &LogisticConfig {
                l2: 1e-6,
                max_iter: 500,
                tol: 1e-8,
            },
        );
        assert!(accuracy(&fit.predict_proba(&x), &y) >= 0.99);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = separable(50, 2);
        let p = LogisticParams {
            intercept: 0.3,
            weights: vec![-0.4, 0.9],
        };
        let (gb, gw) = gradient(&p, &x, &y, 0.1);
        let h = 1e-6;
        let mut q = p.clone();
        q.intercept += h;
        let up = log_loss(&q, &x, &y, 0.1);
        q.intercept -= 2.0 * h;
        let down = log_loss(&q, &x, &y, 0.1);
        assert!(((up - down) / (2.0 * h) - gb).abs() < 1e-7);
        for j in 0..2 {
            let mut q = p.clone();
            q.weights[j] += h;
            let up = log_loss(&q, &x, &y, 0.1);
            q.weights[j] -= 2.0 * h;
            let down = log_loss(&q, &x, &y, 0.1);
            assert!(((up - down) / (2.0 * h) - gw[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn sgd_reduces_loss_and_is_deterministic() {
        let (x, y) = separable(300, 3);
        let cfg = SgdConfig {
            step: 0.01,
            epochs: 10,
            l2: 0.0,
        };
        let a = fit_sgd(&x, &y, &cfg, 5);
        let b = fit_sgd(&x, &y, &cfg, 5);
        assert_eq!(a, b);
        assert!(log_loss(&a, &x, &y, 0.0) < log_loss(&LogisticParams::zeros(2), &x, &y, 0.0));
        assert!(accuracy(&a.predict_proba(&x), &y) > 0.95);
    }

    #[test]
    fn stable_link_functions() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
