//! Least squares and elastic net on log expenditure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearParams {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

fn centered(x: &DMatrix<f64>, y: &[f64]) -> (DMatrix<f64>, Vec<f64>, DVector<f64>, f64) {
    let n = x.nrows() as f64;
    let xm: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).sum() / n).collect();
    let ym = y.iter().sum::<f64>() / n;
    let xc = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - xm[j]);
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - ym));
    (xc, xm, yc, ym)
}

/// Minimum-norm least squares via SVD.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearParams> {
    let (xc, xm, yc, ym) = centered(x, y);
    let coef = if x.ncols() == 0 {
        DVector::zeros(0)
    } else {
        let svd = xc.svd(true, true);
        let tol = svd.singular_values.max() * 1e-12 * (x.nrows().max(x.ncols()) as f64);
        svd.solve(&yc, tol)
            .map_err(|e| Error::Numeric(format!("least squares: {e}")))?
    };
    let coefficients: Vec<f64> = coef.iter().copied().collect();
    let intercept = ym
        - coefficients
            .iter()
            .zip(&xm)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    Ok(LinearParams {
        intercept,
        coefficients,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ElasticNetConfig {
    pub alpha: f64,
    pub l1_ratio: f64,
    pub tol: f64,
    pub max_iter: usize,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on
/// `(1/2n)·|y - b - Xβ|² + α·ρ·|β|₁ + α·(1-ρ)/2·|β|²`.
pub fn fit_elastic_net(
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &ElasticNetConfig,
) -> Result<LinearParams> {
    let (n, p) = (x.nrows(), x.ncols());
    let nf = n as f64;
    let (xc, xm, yc, ym) = centered(x, y);
    let l1 = cfg.alpha * cfg.l1_ratio;
    let l2 = cfg.alpha * (1.0 - cfg.l1_ratio);
    let col_sq: Vec<f64> = (0..p).map(|j| xc.column(j).norm_squared() / nf).collect();
    let mut beta = vec![0.0; p];
    let mut resid = yc.clone();
    let mut converged = p == 0;
    for _ in 0..cfg.max_iter {
        if converged {
            break;
        }
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = xc.column(j);
            let rho = col.dot(&resid) / nf + col_sq[j] * beta[j];
            let new = soft_threshold(rho, l1) / (col_sq[j] + l2);
            let delta = new - beta[j];
            if delta != 0.0 {
                resid.axpy(-delta, &col, 1.0);
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        converged = max_delta < cfg.tol;
    }
    if !converged {
        log::warn!(
            "elastic net stopped at max_iter = {} before reaching tol",
            cfg.max_iter
        );
    }
    let intercept = ym - beta.iter().zip(&xm).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearParams {
        intercept,
        coefficients: beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn data(n: usize, p: usize, seed: u64, beta: &[f64], noise: f64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = crate::rng::rng(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                1.5 + (0..p).map(|j| beta[j] * x[(i, j)]).sum::<f64>() + noise * e
            })
            .collect();
        (x, y)
    }

    #[test]
    fn ols_recovers_exact_coefficients() {
        let beta = [0.5, -1.0, 2.0];
        let (x, y) = data(100, 3, 1, &beta, 0.0);
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.intercept - 1.5).abs() < 1e-10);
        for (a, b) in fit.coefficients.iter().zip(beta) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ols_matches_normal_equations() {
        let (x, y) = data(80, 4, 2, &[1.0, 0.0, -0.3, 0.2], 0.5);
        let fit = fit_ols(&x, &y).unwrap();
        let xa = DMatrix::from_fn(80, 5, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let xtx = xa.transpose() * &xa;
        let xty = xa.transpose() * DVector::from_vec(y);
        let b = xtx.lu().solve(&xty).unwrap();
        assert!((b[0] - fit.intercept).abs() < 1e-9);
        for j in 0..4 {
            assert!((b[j + 1] - fit.coefficients[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn elastic_net_satisfies_kkt() {
        let (x, y) = data(200, 6, 3, &[1.0, 0.0, 0.0, -0.5, 0.05, 0.0], 1.0);
        let cfg = ElasticNetConfig {
            alpha: 0.1,
            l1_ratio: 0.5,
            tol: 1e-12,
            max_iter: 100_000,
        };
        let fit = fit_elastic_net(&x, &y, &cfg).unwrap();
        let n = 200.0;
        let l1 = cfg.alpha * cfg.l1_ratio;
        let l2 = cfg.alpha * (1.0 - cfg.l1_ratio);
        let r: Vec<f64> = (0..200)
            .map(|i| y[i] - fit.predict_row(&x.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        assert!(r.iter().sum::<f64>().abs() < 1e-8);
        let mut zeros = 0;
        for j in 0..6 {
            let g = (0..200).map(|i| x[(i, j)] * r[i]).sum::<f64>() / n - l2 * fit.coefficients[j];
            if fit.coefficients[j] == 0.0 {
                zeros += 1;
                assert!(g.abs() <= l1 + 1e-9);
            } else {
                assert!((g - l1 * fit.coefficients[j].signum()).abs() < 1e-8);
            }
        }
        assert!(zeros >= 1);
    }

    #[test]
    fn tiny_penalty_approaches_ols() {
        let (x, y) = data(150, 3, 4, &[0.3, -0.7, 1.1], 0.2);
        let ols = fit_ols(&x, &y).unwrap();
        let cfg = ElasticNetConfig {
            alpha: 1e-10,
            l1_ratio: 0.5,
            tol: 1e-13,
            max_iter: 100_000,
        };
        let en = fit_elastic_net(&x, &y, &cfg).unwrap();
        for (a, b) in ols.coefficients.iter().zip(&en.coefficients) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
