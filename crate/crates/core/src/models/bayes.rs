//! Gaussian naive Bayes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesParams {
    /// Indexed by class 0 / 1.
    pub log_prior: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
}

/// Per-class moments; every variance is floored by `var_smoothing` times the
/// largest pooled feature variance.
pub fn fit_naive_bayes(x: &DMatrix<f64>, y: &[u8], var_smoothing: f64) -> NaiveBayesParams {
    let (n, p) = (x.nrows(), x.ncols());
    let pooled_max = (0..p)
        .map(|j| {
            let m = x.column(j).sum() / n as f64;
            x.column(j).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64
        })
        .fold(0.0f64, f64::max);
    let eps = (var_smoothing * pooled_max).max(f64::MIN_POSITIVE);
    let mut counts = [0usize; 2];
    let mut means = [vec![0.0; p], vec![0.0; p]];
    for i in 0..n {
        let c = usize::from(y[i]);
        counts[c] += 1;
        for j in 0..p {
            means[c][j] += x[(i, j)];
        }
    }
    for c in 0..2 {
        for m in &mut means[c] {
            *m /= counts[c].max(1) as f64;
        }
    }
    let mut variances = [vec![0.0; p], vec![0.0; p]];
    for i in 0..n {
        let c = usize::from(y[i]);
        for j in 0..p {
            variances[c][j] += (x[(i, j)] - means[c][j]).powi(2);
        }
    }
    for c in 0..2 {
        for v in &mut variances[c] {
            *v = *v / counts[c].max(1) as f64 + eps;
        }
    }
    let log_prior = [0, 1].map(|c| (counts[c] as f64 / n as f64).ln());
    NaiveBayesParams {
        log_prior,
        means,
        variances,
    }
}

impl NaiveBayesParams {
    fn joint_log(&self, c: usize, row: &[f64]) -> f64 {
        let mut s = self.log_prior[c];
        for (j, &v) in row.iter().enumerate() {
            let var = self.variances[c][j];
            s -= 0.5
                * ((2.0 * std::f64::consts::PI * var).ln() + (v - self.means[c][j]).powi(2) / var);
        }
        s
    }

    /// Posterior probability of class 1.
    pub fn predict_proba_row(&self, row: &[f64]) -> f64 {
        let l0 = self.joint_log(0, row);
        let l1 = self.joint_log(1, row);
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        e1 / (e0 + e1)
    }
}
