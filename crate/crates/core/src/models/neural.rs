//! One-hidden-layer perceptron: ReLU hidden units, sigmoid output,
//! cross-entropy loss, mini-batch Adam.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::logistic::{sigmoid, softplus};
use crate::rng;

/// Flat parameter vector laid out as `W1 (hidden × inputs, row-major) | b1 | w2 | b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub theta: Vec<f64>,
}

impl MlpParams {
    pub fn n_params(n_inputs: usize, n_hidden: usize) -> usize {
        n_hidden * n_inputs + 2 * n_hidden + 1
    }

    /// He-normal hidden weights, Glorot-normal output weights, zero biases.
    pub fn init(n_inputs: usize, n_hidden: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0);
        let mut theta = vec![0.0; Self::n_params(n_inputs, n_hidden)];
        let w1 = Normal::new(0.0, (2.0 / n_inputs.max(1) as f64).sqrt()).unwrap();
        for t in &mut theta[..n_hidden * n_inputs] {
            *t = w1.sample(&mut r);
        }
        let w2 = Normal::new(0.0, (2.0 / (n_hidden + 1) as f64).sqrt()).unwrap();
        let off = n_hidden * n_inputs + n_hidden;
        for t in &mut theta[off..off + n_hidden] {
            *t = w2.sample(&mut r);
        }
        Self {
            n_inputs,
            n_hidden,
            theta,
        }
    }

    fn w1(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            self.n_hidden,
            self.n_inputs,
            &self.theta[..self.n_hidden * self.n_inputs],
        )
    }

    fn b1(&self) -> DVector<f64> {
        let o = self.n_hidden * self.n_inputs;
        DVector::from_column_slice(&self.theta[o..o + self.n_hidden])
    }

    fn w2(&self) -> DVector<f64> {
        let o = self.n_hidden * self.n_inputs + self.n_hidden;
        DVector::from_column_slice(&self.theta[o..o + self.n_hidden])
    }

    fn b2(&self) -> f64 {
        *self.theta.last().unwrap()
    }

    /// Hidden pre-activations and output logits.
    fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut z1 = x * self.w1().transpose();
        let b1 = self.b1();
        for mut row in z1.row_iter_mut() {
            row += b1.transpose();
        }
        let a = z1.map(|v| v.max(0.0));
        let z2 = a * self.w2();
        let b2 = self.b2();
        (z1, z2.map(|v| v + b2))
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        if x.nrows() == 0 {
            return Vec::new();
        }
        self.forward(x).1.iter().map(|&z| sigmoid(z)).collect()
    }

    fn l2_norm_sq(&self) -> f64 {
        let w1 = self.n_hidden * self.n_inputs;
        let o = w1 + self.n_hidden;
        self.theta[..w1]
            .iter()
            .chain(&self.theta[o..o + self.n_hidden])
            .map(|v| v * v)
            .sum()
    }

    /// Mean cross-entropy plus `l2/2 · |weights|²`.
    pub fn loss(&self, x: &DMatrix<f64>, y: &[f64], l2: f64) -> f64 {
        let (_, z2) = self.forward(x);
        let data = z2
            .iter()
            .zip(y)
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum::<f64>()
            / x.nrows() as f64;
        data + 0.5 * l2 * self.l2_norm_sq()
    }

    /// Loss and its gradient with respect to `theta`.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &[f64], l2: f64) -> (f64, Vec<f64>) {
        let n = x.nrows() as f64;
        let (h, d) = (self.n_hidden, self.n_inputs);
        let (z1, z2) = self.forward(x);
        let a = z1.map(|v| v.max(0.0));
        let loss = z2
            .iter()
            .zip(y)
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum::<f64>()
            / n
            + 0.5 * l2 * self.l2_norm_sq();
        let dz2 = DVector::from_iterator(
            z2.len(),
            z2.iter().zip(y).map(|(&z, &t)| (sigmoid(z) - t) / n),
        );
        let w2 = self.w2();
        let dw2 = a.tr_mul(&dz2) + &w2 * l2;
        let db2 = dz2.sum();
        let mut dz1 = &dz2 * w2.transpose();
        dz1.zip_apply(&z1, |g, z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let dw1 = dz1.tr_mul(x) + self.w1() * l2;
        let db1 = dz1.row_sum();
        let mut grad = Vec::with_capacity(self.theta.len());
        for i in 0..h {
            for j in 0..d {
                grad.push(dw1[(i, j)]);
            }
        }
        grad.extend(db1.iter());
        grad.extend(dw2.iter());
        grad.push(db2);
        (loss, grad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

/// Trains with Adam; returns the parameters and the full-data loss before
/// training and after each epoch.
pub fn fit_mlp(x: &DMatrix<f64>, y: &[u8], cfg: &MlpConfig, seed: u64) -> (MlpParams, Vec<f64>) {
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let mut params = MlpParams::init(x.ncols(), cfg.hidden, seed);
    let k = params.theta.len();
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; k];
    let mut v = vec![0.0; k];
    let mut t = 0i32;
    let mut history = vec![params.loss(x, &yf, cfg.l2)];
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, epoch as u64 + 1));
        for chunk in order.chunks(batch) {
            let xb = x.select_rows(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| yf[i]).collect();
            let (_, g) = params.loss_and_gradient(&xb, &yb, cfg.l2);
            t += 1;
            let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
            for j in 0..k {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                params.theta[j] -= cfg.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        history.push(params.loss(x, &yf, cfg.l2));
    }
    (params, history)
}

/// Relative error `|a - b| / max(|a|, |b|)` between the analytic gradient and
/// central finite differences with step `h`.
pub fn gradient_check(params: &MlpParams, x: &DMatrix<f64>, y: &[f64], l2: f64, h: f64) -> f64 {
    let (_, analytic) = params.loss_and_gradient(x, y, l2);
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut p = params.clone();
    for j in 0..analytic.len() {
        let orig = p.theta[j];
        p.theta[j] = orig + h;
        let up = p.loss(x, y, l2);
        p.theta[j] = orig - h;
        let down = p.loss(x, y, l2);
        p.theta[j] = orig;
        numeric.push((up - down) / (2.0 * h));
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
        let mut r = rng::rng(seed);
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = DMatrix::from_fn(n, 4, |i, j| {
            let e: f64 = StandardNormal.sample(&mut r);
            e + if y[i] == 1 && j < 2 { 1.5 } else { 0.0 }
        });
        (x, y)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (x, y) = blobs(5, 1);
        let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let p = MlpParams::init(4, 6, 3);
        assert!(gradient_check(&p, &x, &yf, 0.0, 1e-5) < 1e-4);
        assert!(gradient_check(&p, &x, &yf, 0.01, 1e-5) < 1e-4);
    }

    #[test]
    fn training_reduces_loss_deterministically() {
        let (x, y) = blobs(600, 2);
        let cfg = MlpConfig {
            hidden: 16,
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.01,
            l2: 0.0,
        };
        let (a, hist) = fit_mlp(&x, &y, &cfg, 7);
        let (b, _) = fit_mlp(&x, &y, &cfg, 7);
        assert_eq!(a, b);
        assert!(hist.last().unwrap() < &hist[0]);
        let acc = a
            .predict_proba(&x)
            .iter()
            .zip(&y)
            .filter(|(p, &t)| u8::from(**p >= 0.5) == t)
            .count() as f64
            / 600.0;
        assert!(acc > 0.8);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let p = MlpParams::init(3, 4, 0);
        assert!(p.predict_proba(&DMatrix::zeros(0, 3)).is_empty());
    }
}
